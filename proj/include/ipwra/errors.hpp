#pragma once

#include <stdexcept>
#include <string>

namespace ipwra {

// Base for everything thrown by the library, so callers can catch one type.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// data loading / role assignment / value domain problems
struct DataError : Error { using Error::Error; };
// CSV syntax problems (ragged rows, non-numeric cells, missing header)
struct ParseError : DataError { using DataError::DataError; };
// covariate transform spec problems (unknown source, bad power, duplicates)
struct TransformError : Error { using Error::Error; };
// matrix/vector dimension mismatches
struct ShapeError : Error { using Error::Error; };
// rank-deficient design or singular Jacobian
struct SingularError : Error { using Error::Error; };
// perfect separation in a logit-type fit (coefficients diverge)
struct SeparationError : Error { using Error::Error; };
// estimation options that contradict the data or each other
struct ConsistencyError : Error { using Error::Error; };
// |denominator| of a LATE-type ratio below threshold
struct WeakInstrumentError : Error { using Error::Error; };
// degenerate samples (single-arm data, empty cells)
struct DegenerateError : Error { using Error::Error; };
// too many failed bootstrap replicates
struct BootstrapError : Error { using Error::Error; };
// Monte Carlo run exceeded the allowed replication failure rate
struct SimulationError : Error { using Error::Error; };
// config file syntax or field validation problems (path reported per field)
struct ConfigError : Error { using Error::Error; };

} // namespace ipwra
