#pragma once

#include <stdexcept>
#include <string>

namespace hyperinit {

// Error taxonomy shared by every component. Messages are single-line and
// name the offending object (shape, node, parameter) so the CLI can relay
// them verbatim.

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error("validation error: " + msg) {}
};

struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error("state error: " + msg) {}
};

struct InitializationError : std::runtime_error {
    explicit InitializationError(const std::string& msg) : std::runtime_error("initialization error: " + msg) {}
};

struct CapacityError : std::runtime_error {
    explicit CapacityError(const std::string& msg) : std::runtime_error("capacity error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace hyperinit
