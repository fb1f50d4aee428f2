#include "colorloss/step_report.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace colorloss {

void StepReport::set(const std::string& name, double value) {
  for (auto& [key, v] : terms) {
    if (key == name) {
      v = value;
      return;
    }
  }
  terms.emplace_back(name, value);
}

bool StepReport::has(const std::string& name) const {
  for (const auto& entry : terms) {
    if (entry.first == name) return true;
  }
  return false;
}

double StepReport::term(const std::string& name) const {
  for (const auto& [key, v] : terms) {
    if (key == name) return v;
  }
  throw ContractError("step report has no term '" + name + "'");
}

std::vector<std::string> StepReport::term_names() const {
  std::vector<std::string> names;
  for (const auto& entry : terms) names.push_back(entry.first);
  return names;
}

std::string StepReport::to_line() const {
  std::ostringstream out;
  out << "step=" << step;
  char buffer[64];
  for (const auto& [key, v] : terms) {
    // %.17g round-trips doubles exactly
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    out << ' ' << key << '=' << buffer;
  }
  out << " critic_updates=" << critic_updates << " generator_updates=" << generator_updates;
  return out.str();
}

StepReport StepReport::from_line(const std::string& line) {
  StepReport report;
  std::istringstream in(line);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ContractError("malformed step report token '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (key == "step") {
      report.step = std::stoll(value);
    } else if (key == "critic_updates") {
      report.critic_updates = std::stoll(value);
    } else if (key == "generator_updates") {
      report.generator_updates = std::stoll(value);
    } else {
      report.terms.emplace_back(key, std::stod(value));
    }
  }
  return report;
}

}  // namespace colorloss
