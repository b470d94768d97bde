#pragma once

#include <stdexcept>
#include <string>

namespace mcactrl {

// Invalid arguments are reported with std::invalid_argument; the types below
// cover the remaining failure classes callers need to tell apart.

class SingularScheduleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A hook or override broke the shape contract of the layer it replaced.
class ContractViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Segmentation could not find the queried object.
class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mcactrl
