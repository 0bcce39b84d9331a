#pragma once

#include <stdexcept>
#include <string>

namespace mlspde {

struct InvalidGeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidMeshError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidCoefficientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidPairingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnknownMarkerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace mlspde
