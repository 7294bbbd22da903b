#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace forgesem {

// Thrown when a caller violates a documented precondition (bad shapes,
// invalid arguments, malformed config).
class contract_error : public std::runtime_error {
public:
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when training or evaluation produces NaN/Inf where a finite
// value is required.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File system / serialization failures.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint exists but does not match the model (wrong magic, version,
// stage, or parameter names).
class checkpoint_mismatch : public std::runtime_error {
public:
    explicit checkpoint_mismatch(const std::string& msg) : std::runtime_error(msg) {}
};

#define FORGESEM_CHECK(cond, msg)                    \
    do {                                             \
        if (!(cond)) throw ::forgesem::contract_error(msg); \
    } while (0)

template <typename T>
inline bool is_finite_value(T v) {
    return std::isfinite(static_cast<double>(v));
}

} // namespace forgesem
