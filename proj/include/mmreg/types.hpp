#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmreg {

/// Failure categories surfaced by the library. The C API maps each one to a
/// distinct status code (see mmreg.h).
enum class ErrorKind {
    Structural,  // mismatched dimensions, malformed containers
    Input,       // non-finite data, invalid argument values
    Config,      // configuration schema violations
    IO,          // file access and format errors
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
    double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }

    friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(double s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }
    friend bool operator==(const Vec3&, const Vec3&) = default;

    double l1() const { return std::abs(x) + std::abs(y) + std::abs(z); }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    double max_abs() const { return std::max({std::abs(x), std::abs(y), std::abs(z)}); }
};

struct Dims {
    int x = 1;
    int y = 1;
    int z = 1;

    int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    std::size_t count() const {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
    }
    friend bool operator==(const Dims&, const Dims&) = default;
};

struct Index3 {
    int x = 0;
    int y = 0;
    int z = 0;

    int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    friend bool operator==(const Index3&, const Index3&) = default;
};

}  // namespace mmreg
