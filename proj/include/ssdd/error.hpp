#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ssdd {

// Every failure surfaced by the library carries the module that raised it,
// so CLI diagnostics read "decoder: resolution 20 is not divisible by 8".
class Error : public std::runtime_error {
public:
    Error(std::string_view module, const std::string& message)
        : std::runtime_error(std::string(module) + ": " + message), module_(module) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

[[noreturn]] inline void fail(std::string_view module, const std::string& message) { throw Error(module, message); }

inline void require(bool condition, std::string_view module, const std::string& message) {
    if (!condition) {
        fail(module, message);
    }
}

}  // namespace ssdd
