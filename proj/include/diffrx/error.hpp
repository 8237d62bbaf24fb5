#pragma once

#include <stdexcept>
#include <string>

namespace diffrx {

// Every library failure derives from Error; kind() is the stable class name
// the CLI prints on stderr.
class Error : public std::runtime_error {
public:
    Error(const char* kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    const char* kind() const noexcept { return kind_; }

private:
    const char* kind_;
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error("DimensionError", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("ConfigError", what) {}
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error("UsageError", what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error("NumericalError", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("IoError", what) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("FormatError", what) {}
};

} // namespace diffrx
