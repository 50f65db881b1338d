#pragma once

#include <stdexcept>
#include <string>

namespace mtlforge {

// Every recoverable failure in the library is reported as an Error. The CLI
// maps it to exit code 1; UsageError maps to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace mtlforge
