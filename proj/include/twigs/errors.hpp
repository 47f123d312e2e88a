#pragma once

#include <stdexcept>
#include <string>

namespace twigs {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of an operation (t outside [0,1], log of a
// nonpositive entry, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Caller broke a documented precondition.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// A graph metric that has no value on the given graph (no triads, zero degree variance).
struct UndefinedMetric : std::domain_error {
  using std::domain_error::domain_error;
};

// NaN/Inf produced during a numeric computation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file or record.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset record missing something training needs.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace twigs
