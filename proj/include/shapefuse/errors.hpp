#pragma once

#include <stdexcept>
#include <string>

namespace shapefuse {

/// Singular systems, degenerate data, failed registrations: conditions the
/// CLI reports with exit code 2.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

/// Unreadable/unwritable or malformed files: CLI exit code 1.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace shapefuse
