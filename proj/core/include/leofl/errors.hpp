#pragma once

#include <stdexcept>
#include <string>

namespace leofl {

// Invalid or inconsistent experiment configuration (bad key, bad value,
// colliding node ids, ...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed external input file (IDX images/labels, ...). Messages carry the
// byte offset of the first violation where that is meaningful.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// A protocol-level contract was broken (duplicate satellite in a partial,
// mismatched model architectures, event scheduled in the past, ...). These
// indicate bugs in the caller, not recoverable runtime conditions.
class ProtocolError : public std::logic_error {
public:
    explicit ProtocolError(const std::string& what) : std::logic_error(what) {}
};

// Numerical failure inside training (non-finite loss or gradient).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace leofl
