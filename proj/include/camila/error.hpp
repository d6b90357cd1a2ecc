#pragma once

#include <stdexcept>
#include <string>

namespace camila {

/// Base class for every failure the library reports. `kind()` is a short
/// machine-parsable tag used by the CLI error line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error("contract", what) {}
};

struct GenerationError : Error {
    explicit GenerationError(const std::string& what) : Error("generation", what) {}
};

struct TokenizeError : Error {
    explicit TokenizeError(const std::string& what) : Error("tokenize", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io", what) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error("format", what) {}
};

}  // namespace camila
