#pragma once

#include <stdexcept>

namespace engage {

// All library errors derive from std::runtime_error so callers can catch
// one base type at process boundaries. The subtypes distinguish bad
// configuration, bad runtime inputs, misuse of unfitted state, and so on.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace engage
