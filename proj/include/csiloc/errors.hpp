#ifndef CSILOC_ERRORS_HPP
#define CSILOC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace csiloc {

// Shape disagreement between operands or against a fixed layout.
class DimensionError : public std::invalid_argument {
  public:
    explicit DimensionError(const std::string &msg) : std::invalid_argument(msg) {}
};

// Input is structurally valid but mathematically unusable (all-zero vector
// where a norm is required, etc).
class DegenerateInputError : public std::domain_error {
  public:
    explicit DegenerateInputError(const std::string &msg) : std::domain_error(msg) {}
};

// A value lies outside the region an operation is defined on.
class DomainError : public std::domain_error {
  public:
    explicit DomainError(const std::string &msg) : std::domain_error(msg) {}
};

// Bad user-supplied configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string &msg) : std::runtime_error(msg) {}
};

// Corrupt or incompatible data files. CLI exit code 3.
class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string &msg) : std::runtime_error(msg) {}
};

// Non-finite values or a diverged computation. CLI exit code 4.
class NumericalError : public std::runtime_error {
  public:
    explicit NumericalError(const std::string &msg) : std::runtime_error(msg) {}
};

// API misuse: a precondition the caller controls was violated.
class ContractError : public std::logic_error {
  public:
    explicit ContractError(const std::string &msg) : std::logic_error(msg) {}
};

} // namespace csiloc

#endif
