#pragma once

#include <random>
#include <stdexcept>
#include <string>

namespace dmatch {

// Single RNG type used for every sampling decision in the pipeline; all
// operations that draw randomness take one of these explicitly so a fixed
// seed makes a whole run reproducible.
using Rng = std::mt19937_64;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration, schema violation, unusable arguments. CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem / decode / encode failures. CLI exit code 3.
struct IoError : Error {
    using Error::Error;
};

// Degenerate numerical situations (singular systems, no consensus,
// non-finite values). CLI exit code 4.
struct NumericError : Error {
    using Error::Error;
};

// A training sample that cannot be used (e.g. augmentation left no valid
// labels); callers draw a replacement.
struct SampleRejected : Error {
    using Error::Error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 2;
inline constexpr int io = 3;
inline constexpr int numerical = 4;
}  // namespace exit_code

}  // namespace dmatch
