#pragma once
// Independent reference implementations used as test oracles. They work on
// plain doubles with explicit loops and share no code with the library.

#include <torch/torch.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

inline Mat3 inverse(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 r{};
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

inline Vec3 mul(const Mat3& m, const Vec3& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

inline constexpr Vec3 kWhite = {0.95047, 1.0, 1.08883};

// sRGB -> XYZ matrix built from the primaries' chromaticities and the white.
inline Mat3 rgb_to_xyz_matrix() {
  const double xy[3][2] = {{0.64, 0.33}, {0.30, 0.60}, {0.15, 0.06}};
  Mat3 p{};
  for (int c = 0; c < 3; ++c) {
    const double x = xy[c][0], y = xy[c][1];
    p[0][c] = x / y;
    p[1][c] = 1.0;
    p[2][c] = (1.0 - x - y) / y;
  }
  const Vec3 s = mul(inverse(p), kWhite);
  Mat3 m{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m[r][c] = p[r][c] * s[c];
  return m;
}

inline double srgb_decode(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}
inline double srgb_encode(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline double lab_f(double t) {
  const double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}
inline double lab_finv(double f) {
  const double d = 6.0 / 29.0;
  return f > d ? f * f * f : 3.0 * d * d * (f - 4.0 / 29.0);
}

// Unnormalized L in [0, 100], a and b in ab units.
inline Vec3 srgb_to_lab(const Vec3& rgb) {
  const Vec3 lin = {srgb_decode(rgb[0]), srgb_decode(rgb[1]), srgb_decode(rgb[2])};
  const Vec3 xyz = mul(rgb_to_xyz_matrix(), lin);
  const double fx = lab_f(xyz[0] / kWhite[0]);
  const double fy = lab_f(xyz[1] / kWhite[1]);
  const double fz = lab_f(xyz[2] / kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline Vec3 lab_to_srgb(const Vec3& lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const Vec3 xyz = {kWhite[0] * lab_finv(fx), kWhite[1] * lab_finv(fy), kWhite[2] * lab_finv(fz)};
  const Vec3 lin = mul(inverse(rgb_to_xyz_matrix()), xyz);
  return {srgb_encode(lin[0]), srgb_encode(lin[1]), srgb_encode(lin[2])};
}

// ---- tensor access -----------------------------------------------------------

inline std::vector<double> values(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  return std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
}

// Index of element (b, c, h, w) of a contiguous B x C x H x W tensor.
struct Shape4 {
  int64_t B, C, H, W;
  explicit Shape4(const torch::Tensor& t) : B(t.size(0)), C(t.size(1)), H(t.size(2)), W(t.size(3)) {}
  int64_t at(int64_t b, int64_t c, int64_t h, int64_t w) const {
    return ((b * C + c) * H + h) * W + w;
  }
};

// ---- error losses ----------------------------------------------------------------

inline double mse(const torch::Tensor& u, const torch::Tensor& v) {
  const auto a = values(u), b = values(v);
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline double mae_l1(const torch::Tensor& u, const torch::Tensor& v) {
  const auto a = values(u), b = values(v);
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline double mae_l2(const torch::Tensor& u, const torch::Tensor& v) {
  const auto a = values(u), b = values(v);
  const Shape4 s(u);
  double total = 0.0;
  for (int64_t n = 0; n < s.B; ++n)
    for (int64_t h = 0; h < s.H; ++h)
      for (int64_t w = 0; w < s.W; ++w) {
        double sq = 0.0;
        for (int64_t c = 0; c < s.C; ++c) {
          const double d = a[s.at(n, c, h, w)] - b[s.at(n, c, h, w)];
          sq += d * d;
        }
        total += std::sqrt(sq);
      }
  return total / static_cast<double>(s.B * s.H * s.W);
}

inline double huber(const torch::Tensor& u, const torch::Tensor& v, double delta) {
  const auto a = values(u), b = values(v);
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double g = std::abs(a[i] - b[i]);
    s += g <= delta ? 0.5 * g * g : delta * (g - 0.5 * delta);
  }
  return s / static_cast<double>(a.size());
}

// Per-pixel linear map (weights K x C, bias K) followed by ReLU: the test
// feature extractor, evaluated with loops.
struct PixelLinear {
  std::vector<std::vector<double>> weight;  // K x C
  std::vector<double> bias;                 // K

  std::vector<double> apply(const std::vector<double>& x, const Shape4& s) const {
    const int64_t K = static_cast<int64_t>(weight.size());
    std::vector<double> out(static_cast<size_t>(s.B * K * s.H * s.W));
    for (int64_t n = 0; n < s.B; ++n)
      for (int64_t k = 0; k < K; ++k)
        for (int64_t h = 0; h < s.H; ++h)
          for (int64_t w = 0; w < s.W; ++w) {
            double acc = bias[static_cast<size_t>(k)];
            for (int64_t c = 0; c < s.C; ++c) {
              acc += weight[static_cast<size_t>(k)][static_cast<size_t>(c)] * x[s.at(n, c, h, w)];
            }
            out[static_cast<size_t>(((n * K + k) * s.H + h) * s.W + w)] = std::max(acc, 0.0);
          }
    return out;
  }
};

inline double feature_loss(const torch::Tensor& u, const torch::Tensor& v, const PixelLinear& phi) {
  const Shape4 s(u);
  const auto fu = phi.apply(values(u), s), fv = phi.apply(values(v), s);
  const int64_t K = static_cast<int64_t>(phi.weight.size());
  double total = 0.0;
  for (size_t i = 0; i < fu.size(); ++i) total += (fu[i] - fv[i]) * (fu[i] - fv[i]);
  return total / static_cast<double>(K * s.H * s.W) / static_cast<double>(s.B);
}

// LPIPS over one tap of features (B x K x H x W flattened), channel weights w.
inline std::vector<double> lpips_per_image(const std::vector<double>& fu, const std::vector<double>& fv,
                                           int64_t B, int64_t K, int64_t H, int64_t W,
                                           const std::vector<double>& omega) {
  std::vector<double> out(static_cast<size_t>(B), 0.0);
  auto idx = [&](int64_t n, int64_t k, int64_t h, int64_t w) {
    return static_cast<size_t>(((n * K + k) * H + h) * W + w);
  };
  for (int64_t n = 0; n < B; ++n) {
    double sum = 0.0;
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        double nu = 0.0, nv = 0.0;
        for (int64_t k = 0; k < K; ++k) {
          nu += fu[idx(n, k, h, w)] * fu[idx(n, k, h, w)];
          nv += fv[idx(n, k, h, w)] * fv[idx(n, k, h, w)];
        }
        nu = std::sqrt(nu + 1e-10);
        nv = std::sqrt(nv + 1e-10);
        for (int64_t k = 0; k < K; ++k) {
          const double d = omega[static_cast<size_t>(k)] *
                           (fu[idx(n, k, h, w)] / nu - fv[idx(n, k, h, w)] / nv);
          sum += d * d;
        }
      }
    out[static_cast<size_t>(n)] = sum / static_cast<double>(H * W);
  }
  return out;
}

// ---- distributions -------------------------------------------------------------------

inline double floor_log(double p) { return std::log(std::max(p, 1e-10)); }

// Mean over pixels of a per-pixel function of the K-vectors at that pixel.
inline double pixel_mean(const torch::Tensor& a, const torch::Tensor& b,
                         const std::function<double(const std::vector<double>&,
                                                    const std::vector<double>&)>& fn) {
  const auto va = values(a), vb = values(b);
  const Shape4 s(a);
  double total = 0.0;
  std::vector<double> pa(static_cast<size_t>(s.C)), pb(static_cast<size_t>(s.C));
  for (int64_t n = 0; n < s.B; ++n)
    for (int64_t h = 0; h < s.H; ++h)
      for (int64_t w = 0; w < s.W; ++w) {
        for (int64_t k = 0; k < s.C; ++k) {
          pa[static_cast<size_t>(k)] = va[s.at(n, k, h, w)];
          pb[static_cast<size_t>(k)] = vb[s.at(n, k, h, w)];
        }
        total += fn(pa, pb);
      }
  return total / static_cast<double>(s.B * s.H * s.W);
}

inline double kl_pixel(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) s += p[k] * (floor_log(p[k]) - floor_log(q[k]));
  }
  return s;
}

inline double ce_pixel(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (size_t k = 0; k < p.size(); ++k) s -= p[k] * floor_log(q[k]);
  return s;
}

inline double kl(const torch::Tensor& p, const torch::Tensor& q) { return pixel_mean(p, q, kl_pixel); }
inline double ce(const torch::Tensor& p, const torch::Tensor& q) { return pixel_mean(p, q, ce_pixel); }

inline double hue_chroma(const torch::Tensor& pc, const torch::Tensor& qc, const torch::Tensor& ph,
                         const torch::Tensor& qh, const torch::Tensor& chroma, double lambda) {
  const auto vpc = values(pc), vqc = values(qc), vph = values(ph), vqh = values(qh);
  const auto c = values(chroma);
  const Shape4 sc(pc), sh(ph);
  double total = 0.0;
  for (int64_t n = 0; n < sc.B; ++n)
    for (int64_t y = 0; y < sc.H; ++y)
      for (int64_t x = 0; x < sc.W; ++x) {
        std::vector<double> a, b, d, e;
        for (int64_t k = 0; k < sc.C; ++k) {
          a.push_back(vpc[sc.at(n, k, y, x)]);
          b.push_back(vqc[sc.at(n, k, y, x)]);
        }
        for (int64_t k = 0; k < sh.C; ++k) {
          d.push_back(vph[sh.at(n, k, y, x)]);
          e.push_back(vqh[sh.at(n, k, y, x)]);
        }
        const double weight = c[static_cast<size_t>((n * sc.H + y) * sc.W + x)];
        total += kl_pixel(a, b) + lambda * weight * kl_pixel(d, e);
      }
  return total / static_cast<double>(sc.B * sc.H * sc.W);
}

inline double nll(const torch::Tensor& q, const torch::Tensor& targets) {
  const auto vq = values(q);
  const Shape4 s(q);
  auto t = targets.to(torch::kInt64).contiguous();
  const int64_t* tp = t.data_ptr<int64_t>();
  double total = 0.0;
  for (int64_t n = 0; n < s.B; ++n)
    for (int64_t h = 0; h < s.H; ++h)
      for (int64_t w = 0; w < s.W; ++w) {
        const int64_t k = tp[(n * s.H + h) * s.W + w];
        total -= floor_log(vq[s.at(n, k, h, w)]);
      }
  return total / static_cast<double>(s.B * s.H * s.W);
}

// Random B x K x H x W simplex field in float64.
inline torch::Tensor random_simplex(int64_t B, int64_t K, int64_t H, int64_t W, torch::Generator& gen) {
  auto x = torch::rand({B, K, H, W}, gen, torch::kFloat64) + 1e-3;
  return x / x.sum(1, true);
}

// ---- metrics ------------------------------------------------------------------------

inline double psnr(const torch::Tensor& truth, const torch::Tensor& test) {
  const auto a = values(truth), b = values(test);
  double peak = a[0], sq = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    peak = std::max(peak, a[i]);
    sq += (a[i] - b[i]) * (a[i] - b[i]);
  }
  const double m = sq / static_cast<double>(a.size());
  return 20.0 * std::log10(peak) - 10.0 * std::log10(m);
}

// Windowed SSIM of one image (1 x C x H x W): Gaussian windows over valid
// positions, 2-term form, averaged over positions and channels.
inline double ssim_windowed(const torch::Tensor& u, const torch::Tensor& v, int size = 11,
                            double sigma = 1.5, double range = 1.0) {
  const auto a = values(u), b = values(v);
  const Shape4 s(u);
  std::vector<double> g(static_cast<size_t>(size));
  double gsum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    g[static_cast<size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    gsum += g[static_cast<size_t>(i)];
  }
  for (auto& x : g) x /= gsum;
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  double total = 0.0;
  int64_t count = 0;
  for (int64_t c = 0; c < s.C; ++c)
    for (int64_t y = 0; y + size <= s.H; ++y)
      for (int64_t x = 0; x + size <= s.W; ++x) {
        double mu = 0, mv = 0, uu = 0, vv = 0, uv = 0;
        for (int i = 0; i < size; ++i)
          for (int j = 0; j < size; ++j) {
            const double wgt = g[static_cast<size_t>(i)] * g[static_cast<size_t>(j)];
            const double p = a[s.at(0, c, y + i, x + j)], q = b[s.at(0, c, y + i, x + j)];
            mu += wgt * p;
            mv += wgt * q;
            uu += wgt * p * p;
            vv += wgt * q * q;
            uv += wgt * p * q;
          }
        const double su = uu - mu * mu, sv = vv - mv * mv, cov = uv - mu * mv;
        total += ((2 * mu * mv + c1) * (2 * cov + c2)) / ((mu * mu + mv * mv + c1) * (su + sv + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

// Global-statistics SSIM: l * c * s with c3 = c2 / 2, averaged over channels.
inline double ssim_global(const torch::Tensor& u, const torch::Tensor& v, double range = 1.0) {
  const auto a = values(u), b = values(v);
  const Shape4 s(u);
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2), c3 = c2 / 2;
  const double n = static_cast<double>(s.H * s.W);
  double total = 0.0;
  for (int64_t c = 0; c < s.C; ++c) {
    double mu = 0, mv = 0;
    for (int64_t y = 0; y < s.H; ++y)
      for (int64_t x = 0; x < s.W; ++x) {
        mu += a[s.at(0, c, y, x)];
        mv += b[s.at(0, c, y, x)];
      }
    mu /= n;
    mv /= n;
    double su = 0, sv = 0, cov = 0;
    for (int64_t y = 0; y < s.H; ++y)
      for (int64_t x = 0; x < s.W; ++x) {
        const double p = a[s.at(0, c, y, x)] - mu, q = b[s.at(0, c, y, x)] - mv;
        su += p * p;
        sv += q * q;
        cov += p * q;
      }
    su /= n;
    sv /= n;
    cov /= n;
    const double l = (2 * mu * mv + c1) / (mu * mu + mv * mv + c1);
    const double con = (2 * std::sqrt(su) * std::sqrt(sv) + c2) / (su + sv + c2);
    const double st = (cov + c3) / (std::sqrt(su) * std::sqrt(sv) + c3);
    total += l * con * st;
  }
  return total / static_cast<double>(s.C);
}

// AuC curve from normalized ab tensors (B x 2 x H x W).
inline std::vector<double> auc_curve(const torch::Tensor& pred, const torch::Tensor& truth) {
  const auto a = values(pred), b = values(truth);
  const Shape4 s(pred);
  std::vector<double> curve(151, 0.0);
  const double n = static_cast<double>(s.B * s.H * s.W);
  for (int64_t k = 0; k < s.B; ++k)
    for (int64_t y = 0; y < s.H; ++y)
      for (int64_t x = 0; x < s.W; ++x) {
        const double da = (a[s.at(k, 0, y, x)] - b[s.at(k, 0, y, x)]) * 110.0;
        const double db = (a[s.at(k, 1, y, x)] - b[s.at(k, 1, y, x)]) * 110.0;
        const double d = std::sqrt(da * da + db * db);
        for (int t = 0; t <= 150; ++t)
          if (d <= t + 1e-6) curve[static_cast<size_t>(t)] += 1.0 / n;
      }
  return curve;
}

// ---- finite differences ---------------------------------------------------------

// Central-difference directional derivative of f at x along d.
inline double directional_fd(const std::function<double(const torch::Tensor&)>& f,
                             const torch::Tensor& x, const torch::Tensor& d, double h) {
  return (f(x + h * d) - f(x - h * d)) / (2.0 * h);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace oracle
