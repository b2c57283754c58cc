// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lodestone {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent task/pool/label data.
struct DataError : Error {
    using Error::Error;
};

/// Invalid run configuration or missing stage inputs.
struct ConfigError : Error {
    using Error::Error;
};

/// File read/write failure.
struct IoError : Error {
    using Error::Error;
};

/// An example could not be labeled (e.g. no eligible same-task candidate).
struct LabelingError : Error {
    using Error::Error;
};

/// Transport-level LM failure after the retry budget was exhausted.
struct LmTransportError : Error {
    LmTransportError(const std::string& what, int attempts_made)
        : Error(what), attempts(attempts_made) {}
    int attempts;
};

/// The LM endpoint answered, but not in the agreed wire format.
struct LmProtocolError : Error {
    using Error::Error;
};

}  // namespace lodestone
