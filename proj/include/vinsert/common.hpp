#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace vinsert {

// Thrown when an input violates a documented invariant or precondition.
// The CLI maps these to exit code 1; everything else (I/O, internal) is a
// fatal_error and maps to exit code 2.
struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct fatal_error : std::runtime_error {
    explicit fatal_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string format_str(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[1024];
    vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

#define VINSERT_CHECK(cond, ...)                                             \
    do {                                                                     \
        if (!(cond)) throw ::vinsert::validation_error(::vinsert::format_str(__VA_ARGS__)); \
    } while (0)

#define VINSERT_FATAL_CHECK(cond, ...)                                       \
    do {                                                                     \
        if (!(cond)) throw ::vinsert::fatal_error(::vinsert::format_str(__VA_ARGS__)); \
    } while (0)

inline void log_warn(const std::string& msg) {
    fprintf(stderr, "[warn] %s\n", msg.c_str());
}

inline void log_info(const std::string& msg) {
    fprintf(stderr, "[info] %s\n", msg.c_str());
}

// splitmix64, used to derive independent sub-seeds from one master seed
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace vinsert
