#pragma once

#include <stdexcept>
#include <string>

namespace dede {

// Shape/precondition violation in a numeric primitive or model contract.
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input outside a primitive's mathematical domain (log of nonpositive, zero-norm cosine, ...).
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or unreadable on-disk artifact (bad magic, version, checksum).
class IntegrityError : public std::runtime_error {
public:
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or unopenable input file.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration file: unknown key, unparsable value, invalid combination.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced NaN/Inf loss.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace dede
