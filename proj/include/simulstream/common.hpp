#pragma once

#include <stdexcept>
#include <string>

namespace simulstream {

// Error taxonomy. The CLI maps these onto exit codes (usage -> 2,
// I/O and file format -> 3, everything else -> 1), so new failure
// modes should reuse one of these categories.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration value or combination.
struct ConfigError : Error {
    using Error::Error;
};

// Frames or packets arrived out of order.
struct SequenceError : Error {
    using Error::Error;
};

// Non-finite values entered a numeric kernel.
struct NumericError : Error {
    using Error::Error;
};

// A decoder operation was invoked against the read/write schedule.
struct ScheduleError : Error {
    using Error::Error;
};

// Malformed weight file, config document, or WAV container.
struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace simulstream
