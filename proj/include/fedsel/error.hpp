#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedsel {

/// Root of every error thrown by the library. `kind()` is a stable short tag
/// the CLI uses to choose an exit code and tests use to assert error classes.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define FEDSEL_DEFINE_ERROR(Name, tag)                                      \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& what) : Error(tag, what) {}        \
    };

FEDSEL_DEFINE_ERROR(InvalidArgument, "invalid-argument")
FEDSEL_DEFINE_ERROR(SchemaError, "schema")
FEDSEL_DEFINE_ERROR(UnsupportedLabel, "unsupported-label")
FEDSEL_DEFINE_ERROR(InsufficientData, "insufficient-data")
FEDSEL_DEFINE_ERROR(NumericError, "numeric")
FEDSEL_DEFINE_ERROR(BudgetExhausted, "budget-exhausted")
FEDSEL_DEFINE_ERROR(FormatError, "format")
FEDSEL_DEFINE_ERROR(CorruptionError, "corruption")
FEDSEL_DEFINE_ERROR(IoError, "io")
FEDSEL_DEFINE_ERROR(NoClients, "no-clients")
FEDSEL_DEFINE_ERROR(NoUpdates, "no-updates")
FEDSEL_DEFINE_ERROR(UndefinedMetric, "undefined-metric")
FEDSEL_DEFINE_ERROR(ConfigError, "config")

#undef FEDSEL_DEFINE_ERROR

/// Parse failure that remembers the offending data row (0-based, header excluded).
class ParseError : public Error {
public:
    ParseError(std::size_t row, const std::string& what)
        : Error("parse", what + " (row " + std::to_string(row) + ")"), row_(row) {}

    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

} // namespace fedsel
