#pragma once

#include <stdexcept>
#include <string>

namespace rear {

// File-level corruption, CRC mismatch, or cache/tokenizer binding violations.
// The CLI maps this to exit code 3.
class IntegrityError : public std::runtime_error {
public:
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable/unwritable paths and missing artifacts.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rear
