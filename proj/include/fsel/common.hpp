#pragma once

#include <charconv>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fsel {

inline constexpr const char* kToolVersion = "0.1.0";

// Error taxonomy. The CLI maps these onto exit codes, everything else
// propagates as ordinary exceptions.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct CapacityError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

// Shortest decimal form that parses back to the same value.
template <typename Real>
std::string format_real(Real v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

template <typename Real>
Real parse_real(std::string_view text) {
    Real v{};
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw FormatError("cannot parse number: '" + std::string(text) + "'");
    }
    return v;
}

template <typename Int>
Int parse_int(std::string_view text) {
    Int v{};
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw FormatError("cannot parse integer: '" + std::string(text) + "'");
    }
    return v;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace fsel
