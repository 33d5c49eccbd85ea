#pragma once

#include <stdexcept>
#include <string>

namespace riskctl {

// Exception hierarchy. The CLI maps each family onto an exit code:
// ConfigError -> 2, InfeasibleError -> 3, NumericalError -> 4.

/// Invalid model parameters (probability outside (0,1), negative volatility, ...).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent configuration input.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A node subproblem has an empty feasible set.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unbounded subproblems, solver breakdown, state escaping its stored domain.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace riskctl
