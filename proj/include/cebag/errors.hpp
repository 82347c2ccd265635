#pragma once

#include <stdexcept>
#include <string>

namespace cebag {

// Input violated a domain invariant (bad logprob, length mismatch, ...).
// Messages are stable strings; tests assert on their content.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Evaluation requested on a single-class label set. Kept distinct from
// ValidationError so callers can map it to its own exit code instead of
// silently reporting 0.5.
class DegenerateLabelsError : public std::runtime_error {
public:
    explicit DegenerateLabelsError(const std::string& what) : std::runtime_error(what) {}
};

// The inference endpoint cannot serve a required feature (teacher-forced
// per-token logprobs). Raised by the capability probe before any task runs.
class CapabilityError : public std::runtime_error {
public:
    explicit CapabilityError(const std::string& what) : std::runtime_error(what) {}
};

// A stream or file operation failed.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace cebag
