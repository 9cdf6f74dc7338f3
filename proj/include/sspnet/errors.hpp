#pragma once

#include <stdexcept>
#include <string>

namespace sspnet {

// Error taxonomy used across the library. The CLI maps UsageError to exit
// code 2 and everything else to exit code 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

struct SchemaMismatchError : Error {
    explicit SchemaMismatchError(const std::string& msg) : Error(msg) {}
};

struct StateError : Error {
    explicit StateError(const std::string& msg) : Error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct MissingPriorError : Error {
    explicit MissingPriorError(const std::string& msg) : Error(msg) {}
};

struct IntegrityError : Error {
    explicit IntegrityError(const std::string& msg) : Error(msg) {}
};

struct VersionError : Error {
    explicit VersionError(const std::string& msg) : Error(msg) {}
};

}  // namespace sspnet
