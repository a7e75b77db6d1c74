#pragma once

#include <stdexcept>
#include <string>

namespace lexcorpus {

/// Unreadable or unwritable file / container.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed configuration; surfaced at load time, never mid-stage.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A record or file that does not parse as the expected schema.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ExtractionFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PlanningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class StageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace lexcorpus
