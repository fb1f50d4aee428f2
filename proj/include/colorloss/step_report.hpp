#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "colorloss/error.hpp"

namespace colorloss {

// Scalars produced by one training step, in insertion order.
struct StepReport {
  int64_t step = 0;
  std::vector<std::pair<std::string, double>> terms;
  int64_t critic_updates = 0;
  int64_t generator_updates = 0;

  void set(const std::string& name, double value);
  bool has(const std::string& name) const;
  double term(const std::string& name) const;
  std::vector<std::string> term_names() const;

  // "step=12 content_mse=0.0123 ... critic_updates=5 generator_updates=1"
  std::string to_line() const;
  static StepReport from_line(const std::string& line);
};

class NonFiniteLoss : public NumericError {
 public:
  NonFiniteLoss(const std::string& what, StepReport report)
      : NumericError(what), report_(std::move(report)) {}
  const StepReport& report() const { return report_; }

 private:
  StepReport report_;
};

}  // namespace colorloss
