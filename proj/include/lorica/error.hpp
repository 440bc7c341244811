#pragma once

#include <stdexcept>
#include <string>

namespace lorica {

enum class ErrorCategory { config, runtime, io };

/// Base for every error the library raises. The category maps onto the CLI
/// exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

class RuntimeError : public Error {
public:
    explicit RuntimeError(const std::string& what) : Error(ErrorCategory::runtime, what) {}
};

/// Shape disagreement between tensors; `layer` is -1 when not layer-specific.
class DimensionError : public RuntimeError {
public:
    DimensionError(int layer, const std::string& what)
        : RuntimeError(layer >= 0 ? "layer " + std::to_string(layer) + ": " + what : what),
          layer_(layer) {}

    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

class NonFiniteError : public RuntimeError {
public:
    NonFiniteError(long batch_index, const std::string& what)
        : RuntimeError("batch " + std::to_string(batch_index) + ": " + what),
          batch_index_(batch_index) {}

    long batch_index() const noexcept { return batch_index_; }

private:
    long batch_index_;
};

}  // namespace lorica
