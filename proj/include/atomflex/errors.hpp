#pragma once

#include <stdexcept>
#include <string>

namespace atomflex {

/// Violation of an operation's contract (shape mismatch, bad index, missing
/// gradient). These indicate a programming error in the caller, not bad data.
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Malformed input file. Carries the 1-based line number and column span of
/// the offending field when known (0 when not applicable).
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line = 0, std::size_t col_begin = 0,
               std::size_t col_end = 0)
        : std::runtime_error(what), line(line), col_begin(col_begin), col_end(col_end) {}

    std::size_t line;
    std::size_t col_begin;
    std::size_t col_end;
};

/// Network-level failure after bounded retries.
class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

/// The remote service reported that the requested entry does not exist.
class NotFoundError : public std::runtime_error {
public:
    explicit NotFoundError(const std::string& what) : std::runtime_error(what) {}
};

/// Configuration file violates the expected schema. Carries the offending key.
class SchemaError : public std::runtime_error {
public:
    SchemaError(const std::string& what, std::string key = {})
        : std::runtime_error(what), key(std::move(key)) {}

    std::string key;
};

}  // namespace atomflex
