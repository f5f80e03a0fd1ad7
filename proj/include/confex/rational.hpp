#pragma once

#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>

namespace confex {

// Exact rational arithmetic on 64-bit numerator / positive denominator.
//
// Conformal p-values are multiples of 1/(l+1) and BH step lines are
// alpha*k/m; keeping both exact makes the decentralized count-exchange
// and the pooled step-up procedure agree bit for bit, with no float
// boundary cases at the rejection threshold.
class Rational {
 public:
  constexpr Rational() = default;

  Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
    if (den_ == 0) throw std::invalid_argument("Rational: zero denominator");
    if (den_ < 0) {
      num_ = -num_;
      den_ = -den_;
    }
    reduce();
  }

  // Parses a plain decimal literal ("0.1", "-2", "0.025") into the exact
  // fraction it denotes. No exponents, at most 18 total digits.
  static Rational from_decimal(std::string_view text) {
    std::size_t pos = 0;
    bool negative = false;
    if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
      negative = text[pos] == '-';
      ++pos;
    }
    std::int64_t num = 0;
    std::int64_t den = 1;
    int digits = 0;
    bool seen_dot = false;
    bool seen_digit = false;
    for (; pos < text.size(); ++pos) {
      char c = text[pos];
      if (c == '.') {
        if (seen_dot) throw std::invalid_argument("Rational: bad decimal: " + std::string(text));
        seen_dot = true;
        continue;
      }
      if (c < '0' || c > '9') {
        throw std::invalid_argument("Rational: bad decimal: " + std::string(text));
      }
      if (++digits > 18) throw std::invalid_argument("Rational: decimal too long: " + std::string(text));
      num = num * 10 + (c - '0');
      if (seen_dot) den *= 10;
      seen_digit = true;
    }
    if (!seen_digit) throw std::invalid_argument("Rational: bad decimal: " + std::string(text));
    return Rational(negative ? -num : num, den);
  }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }

  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  std::string to_string() const {
    return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
  }

  bool is_zero() const { return num_ == 0; }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend bool operator!=(const Rational& a, const Rational& b) { return !(a == b); }
  friend bool operator<(const Rational& a, const Rational& b) {
    return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
  }
  friend bool operator<=(const Rational& a, const Rational& b) { return !(b < a); }
  friend bool operator>(const Rational& a, const Rational& b) { return b < a; }
  friend bool operator>=(const Rational& a, const Rational& b) { return !(a < b); }

  Rational operator*(const Rational& o) const {
    // cross-reduce first so intermediates stay small
    std::int64_t g1 = std::gcd(std::abs(num_), o.den_);
    std::int64_t g2 = std::gcd(std::abs(o.num_), den_);
    __int128 n = static_cast<__int128>(num_ / g1) * (o.num_ / g2);
    __int128 d = static_cast<__int128>(den_ / g2) * (o.den_ / g1);
    return from_checked(n, d);
  }

  Rational operator+(const Rational& o) const {
    __int128 n = static_cast<__int128>(num_) * o.den_ + static_cast<__int128>(o.num_) * den_;
    __int128 d = static_cast<__int128>(den_) * o.den_;
    return from_checked(n, d);
  }

 private:
  void reduce() {
    if (num_ == 0) {
      den_ = 1;
      return;
    }
    std::int64_t g = std::gcd(std::abs(num_), den_);
    num_ /= g;
    den_ /= g;
  }

  static Rational from_checked(__int128 n, __int128 d) {
    __int128 g = gcd128(n < 0 ? -n : n, d);
    if (g > 1) {
      n /= g;
      d /= g;
    }
    if (n > INT64_MAX || n < INT64_MIN || d > INT64_MAX) {
      throw std::overflow_error("Rational: magnitude exceeds 64-bit range");
    }
    Rational r;
    r.num_ = static_cast<std::int64_t>(n);
    r.den_ = static_cast<std::int64_t>(d);
    return r;
  }

  static __int128 gcd128(__int128 a, __int128 b) {
    while (b != 0) {
      __int128 t = a % b;
      a = b;
      b = t;
    }
    return a == 0 ? 1 : a;
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

}  // namespace confex
