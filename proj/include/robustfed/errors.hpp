// Copyright 2026 The robustfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ROBUSTFED_ERRORS_HPP
#define ROBUSTFED_ERRORS_HPP

#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>

namespace robustfed
{

//------------------------------------------------------------------------------
enum class ConfigErrc
{
    missingFile = 10,
    syntax = 11,
    unknownKey = 12,
    outOfRange = 13,
    invalid = 14
};

//------------------------------------------------------------------------------
/// Invalid configuration: bad file, bad key, bad value, or mismatched shapes.
class ConfigError : public std::runtime_error
{
public:
    explicit ConfigError(const std::string& what,
                         ConfigErrc code = ConfigErrc::invalid)
        : std::runtime_error(what), code_(code)
    {}

    ConfigErrc code() const noexcept {return code_;}

private:
    ConfigErrc code_;
};

//------------------------------------------------------------------------------
/// Caller violated an operation precondition (empty batch, lambda out of
/// range, unknown baseline name, ...).
class UsageError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

//------------------------------------------------------------------------------
/// Non-finite values reached a numeric routine.
class NumericError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

//------------------------------------------------------------------------------
namespace log
{

inline bool& quiet()
{
    static bool flag = false;
    return flag;
}

inline void warn(const std::string& msg)
{
    static std::mutex mutex;
    if (quiet())
        return;
    std::lock_guard<std::mutex> lock(mutex);
    std::clog << "[warn] " << msg << '\n';
}

} // namespace log

} // namespace robustfed

#endif // ROBUSTFED_ERRORS_HPP
