#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nst {

// Base class for all library errors. Subclasses carry the structured
// context the CLI needs for its exit-code mapping and error messages.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape mismatch. layer_index is -1 when no layer applies.
class ShapeError : public Error {
public:
    ShapeError(const std::string& msg, int layer_index = -1)
        : Error(layer_index >= 0 ? "layer " + std::to_string(layer_index) + ": " + msg : msg),
          layer_index(layer_index) {}
    int layer_index;
};

// Non-finite value where a finite one is required (overflow, bad gradient,
// undefined normalization). layer_index is -1 when no layer applies.
class NumericError : public Error {
public:
    NumericError(const std::string& msg, int layer_index = -1)
        : Error(layer_index >= 0 ? "layer " + std::to_string(layer_index) + ": " + msg : msg),
          layer_index(layer_index) {}
    int layer_index;
};

// A row that should be a probability distribution is not one.
class DistributionError : public Error {
public:
    using Error::Error;
};

// Malformed input file. byte_offset points at the failing position.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset(byte_offset) {}
    std::size_t byte_offset;
};

// Invalid configuration. field names the offending config path when known.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg, std::string field = {})
        : Error(field.empty() ? msg : field + ": " + msg), field(std::move(field)) {}
    std::string field;
};

// Filesystem failure surfaced with the path involved.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg, std::string path = {})
        : Error(path.empty() ? msg : msg + ": " + path), path(std::move(path)) {}
    std::string path;
};

}  // namespace nst
