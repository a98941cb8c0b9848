#pragma once

#include <stdexcept>
#include <string>

namespace btks {

// Invalid model/run configuration or mismatched shapes. CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input data: too-short tracklets, unusable batches, I/O failures. CLI exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// API used out of order (e.g. non-consecutive backbone stages).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A numerical self-check failed (gradient check above tolerance, non-finite loss). CLI exit code 3.
class VerificationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace btks
