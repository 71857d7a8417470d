#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <optional>
#include <cmath>

namespace foliage {

/// Error type used throughout the library for construction/evaluation failures.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline std::int64_t narrow128(__int128 v, const char* what) {
    if (v > static_cast<__int128>(INT64_MAX) || v < static_cast<__int128>(INT64_MIN))
        throw Error(std::string("rational overflow in ") + what);
    return static_cast<std::int64_t>(v);
}
} // namespace detail

/// Exact rational number on int64 with checked arithmetic.
/// Overflow throws; arbitrary precision is out of scope.
class Rational {
public:
    Rational() : n_(0), d_(1) {}
    Rational(std::int64_t n) : n_(n), d_(1) {}
    Rational(std::int64_t n, std::int64_t d) : n_(n), d_(d) { normalize(); }

    std::int64_t num() const { return n_; }
    std::int64_t den() const { return d_; }

    bool is_zero() const { return n_ == 0; }
    bool is_one() const { return n_ == 1 && d_ == 1; }
    bool is_integer() const { return d_ == 1; }
    bool is_negative() const { return n_ < 0; }

    friend Rational operator+(const Rational& a, const Rational& b) {
        __int128 n = (__int128)a.n_ * b.d_ + (__int128)b.n_ * a.d_;
        __int128 d = (__int128)a.d_ * b.d_;
        return make128(n, d, "+");
    }
    friend Rational operator-(const Rational& a, const Rational& b) {
        __int128 n = (__int128)a.n_ * b.d_ - (__int128)b.n_ * a.d_;
        __int128 d = (__int128)a.d_ * b.d_;
        return make128(n, d, "-");
    }
    friend Rational operator*(const Rational& a, const Rational& b) {
        return make128((__int128)a.n_ * b.n_, (__int128)a.d_ * b.d_, "*");
    }
    friend Rational operator/(const Rational& a, const Rational& b) {
        if (b.n_ == 0) throw Error("rational division by zero");
        return make128((__int128)a.n_ * b.d_, (__int128)a.d_ * b.n_, "/");
    }
    Rational operator-() const { Rational r; r.n_ = -n_; r.d_ = d_; return r; }
    Rational& operator+=(const Rational& o) { *this = *this + o; return *this; }
    Rational& operator-=(const Rational& o) { *this = *this - o; return *this; }
    Rational& operator*=(const Rational& o) { *this = *this * o; return *this; }
    Rational& operator/=(const Rational& o) { *this = *this / o; return *this; }

    friend bool operator==(const Rational& a, const Rational& b) { return a.n_ == b.n_ && a.d_ == b.d_; }
    friend bool operator!=(const Rational& a, const Rational& b) { return !(a == b); }
    friend bool operator<(const Rational& a, const Rational& b) {
        return (__int128)a.n_ * b.d_ < (__int128)b.n_ * a.d_;
    }
    friend bool operator>(const Rational& a, const Rational& b) { return b < a; }
    friend bool operator<=(const Rational& a, const Rational& b) { return !(b < a); }
    friend bool operator>=(const Rational& a, const Rational& b) { return !(a < b); }

    /// Integer power; e may be negative (then *this must be nonzero).
    Rational pow_int(std::int64_t e) const {
        Rational base = *this;
        if (e < 0) {
            if (n_ == 0) throw Error("0 raised to a negative power");
            base = Rational(d_, n_);
            e = -e;
        }
        Rational out(1);
        while (e > 0) {
            if (e & 1) out *= base;
            base = (e > 1) ? base * base : base;
            e >>= 1;
        }
        return out;
    }

    /// Exact square root if this is a perfect square of a rational, else nullopt.
    std::optional<Rational> exact_sqrt() const {
        if (n_ < 0) return std::nullopt;
        auto isqrt = [](std::int64_t v) -> std::optional<std::int64_t> {
            if (v < 0) return std::nullopt;
            std::int64_t r = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(v))));
            for (std::int64_t c = r - 2; c <= r + 2; ++c)
                if (c >= 0 && c * c == v) return c;
            return std::nullopt;
        };
        auto sn = isqrt(n_), sd = isqrt(d_);
        if (sn && sd) return Rational(*sn, *sd);
        return std::nullopt;
    }

    double to_double() const { return static_cast<double>(n_) / static_cast<double>(d_); }

    std::string str() const {
        if (d_ == 1) return std::to_string(n_);
        return std::to_string(n_) + "/" + std::to_string(d_);
    }

    friend int cmp(const Rational& a, const Rational& b) {
        if (a == b) return 0;
        return a < b ? -1 : 1;
    }

private:
    static Rational make128(__int128 n, __int128 d, const char* what) {
        if (d == 0) throw Error("rational division by zero");
        if (d < 0) { n = -n; d = -d; }
        __int128 g = gcd128(n < 0 ? -n : n, d);
        if (g > 1) { n /= g; d /= g; }
        Rational r;
        r.n_ = detail::narrow128(n, what);
        r.d_ = detail::narrow128(d, what);
        return r;
    }
    static __int128 gcd128(__int128 a, __int128 b) {
        while (b != 0) { __int128 t = a % b; a = b; b = t; }
        return a == 0 ? 1 : a;
    }
    void normalize() {
        if (d_ == 0) throw Error("rational with zero denominator");
        if (d_ < 0) { n_ = -n_; d_ = -d_; }
        std::int64_t g = std::gcd(n_ < 0 ? -n_ : n_, d_);
        if (g > 1) { n_ /= g; d_ /= g; }
    }

    std::int64_t n_, d_;
};

} // namespace foliage
