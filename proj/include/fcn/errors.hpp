#pragma once

#include <stdexcept>
#include <string>

namespace fcn {

// Base for everything thrown by the engine.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor geometry violations (mismatched channels, non-divisible strides, ...).
struct ShapeError : Error {
    using Error::Error;
};

// Invalid argument values (std <= 0, empty input list, ...).
struct ParamError : Error {
    using Error::Error;
};

// Broken API contracts (backward twice, non-scalar loss, shape drift).
struct ContractError : Error {
    using Error::Error;
};

// Bad model/run configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset problems: unreadable files, non-binary masks, bad manifests.
struct DataError : Error {
    using Error::Error;
};

// Checkpoint encoding problems: bad magic, truncation, unknown tensors.
struct FormatError : Error {
    using Error::Error;
};

// NaN/Inf escaped an operator.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace fcn
