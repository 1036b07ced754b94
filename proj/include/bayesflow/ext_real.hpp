#pragma once

#include <limits>
#include <ostream>

namespace bayesflow {

/// A real number or +infinity. Infinity is an explicit state, never the
/// result of floating-point overflow.
class ExtReal {
 public:
  constexpr ExtReal() = default;
  constexpr ExtReal(double v) : value_(v) {}  // NOLINT(implicit)

  static constexpr ExtReal infinity() {
    ExtReal r;
    r.infinite_ = true;
    return r;
  }

  constexpr bool is_infinite() const { return infinite_; }
  constexpr bool is_finite() const { return !infinite_; }

  /// Finite value; +inf maps to std::numeric_limits<double>::infinity().
  constexpr double value() const {
    return infinite_ ? std::numeric_limits<double>::infinity() : value_;
  }

  friend constexpr ExtReal operator+(ExtReal a, ExtReal b) {
    if (a.infinite_ || b.infinite_) return infinity();
    return ExtReal(a.value_ + b.value_);
  }
  friend constexpr ExtReal operator+(ExtReal a, double b) { return a + ExtReal(b); }

  friend std::ostream& operator<<(std::ostream& os, ExtReal x) {
    if (x.infinite_) return os << "+inf";
    return os << x.value_;
  }

 private:
  double value_ = 0.0;
  bool infinite_ = false;
};

}  // namespace bayesflow
