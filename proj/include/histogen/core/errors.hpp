#pragma once

#include <stdexcept>
#include <string>

namespace histogen {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/layer shape violations. Every shape contract fails loudly.
struct ShapeError : Error {
    using Error::Error;
};

// Bad or inconsistent configuration (including device-count mismatches).
struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// A token sequence exceeds the window capacity it was asked to fit.
struct OverBudgetError : Error {
    using Error::Error;
};

}  // namespace histogen
