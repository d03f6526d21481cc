#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace catqvi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A single violated invariant, addressed by its configuration path.
struct Violation {
    std::string path;
    std::string message;
};

/// Invalid configuration or invalid arguments to a model operation.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<Violation> violations);
    ConfigError(std::string path, std::string message);

    const std::vector<Violation>& violations() const noexcept { return violations_; }

private:
    std::vector<Violation> violations_;
};

/// Precondition failure of a domain operation (bad argument, infeasible action).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, failed bisection, CFL violations and similar.
class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace catqvi
