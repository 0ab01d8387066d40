#pragma once

#include <stdexcept>
#include <string>

namespace arl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IllegalTransition : public Error {
public:
    using Error::Error;
};

class ShutdownError : public Error {
public:
    using Error::Error;
};

class VersionRegression : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace arl
