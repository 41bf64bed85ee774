#pragma once

#include <stdexcept>
#include <string>

namespace mise {

// Error kinds map one-to-one onto CLI exit codes (see cli.hpp).
enum class ErrorKind { usage, data, numeric, contract };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

// Raised when a caller breaks an API contract, e.g. reading query labels
// while they are sealed during adaptation.
struct ContractViolation : Error {
    explicit ContractViolation(const std::string& what) : Error(ErrorKind::contract, what) {}
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::contract: return "contract";
    }
    return "unknown";
}

} // namespace mise
