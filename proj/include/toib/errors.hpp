#pragma once

#include <stdexcept>
#include <string>

namespace toib {

// Error taxonomy. Dimension/domain errors come from tensor ops, contract
// errors from violated call preconditions, format errors from file I/O,
// degenerate-input errors from inputs that make an operation ill-posed.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& msg) : Error("degenerate input: " + msg) {}
};

}  // namespace toib
