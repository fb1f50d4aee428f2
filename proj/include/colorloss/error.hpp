#pragma once

#include <stdexcept>
#include <string>

namespace colorloss {

// Precondition failures: wrong color space, mismatched shapes, bad parameters.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// File, archive and checkpoint problems.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace colorloss
