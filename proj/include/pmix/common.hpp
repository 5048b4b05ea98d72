// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pmix {

inline constexpr const char* kVersion = "0.1.0";

// Thrown when a training loss turns non-finite; carries the optimizer step
// at which it happened so callers can report it (CLI exit code 3).
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::int64_t step, const std::string& what)
        : std::runtime_error(what), step_(step) {}
    std::int64_t step() const { return step_; }

private:
    std::int64_t step_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Config files reject unknown keys outright (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pmix
