#pragma once

#include <stdexcept>
#include <string>

namespace pheye {

// Every error the library raises derives from Error so callers (the CLI in
// particular) can report a structured type name alongside the message.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

class DimensionError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "dimension_error"; }
};

class NumericError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numeric_error"; }
};

class InputError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "input_error"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config_error"; }
};

class ContractError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "contract_error"; }
};

class TrainingError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "training_error"; }
};

}  // namespace pheye
