#pragma once
// Bracketed scalar root finding.

#include <cmath>
#include <functional>

namespace rotpend {

struct RootResult {
  double x = 0.0;
  double fx = 0.0;
  double a = 0.0, b = 0.0;  // final bracket
  double fa = 0.0, fb = 0.0;
  int evaluations = 0;
};

/// Illinois-modified regula falsi on a sign-changing bracket [a, b].  Stops
/// when |f| <= ftol or the bracket is narrower than xtol.
inline RootResult illinois(const std::function<double(double)>& f, double a, double fa, double b, double fb,
                           double ftol, double xtol, int max_iter = 100) {
  RootResult r;
  r.a = a, r.b = b, r.fa = fa, r.fb = fb;
  r.x = std::abs(fa) < std::abs(fb) ? a : b;
  r.fx = std::abs(fa) < std::abs(fb) ? fa : fb;
  double wa = fa, wb = fb;  // weighted values used for the secant step
  int side = 0;
  for (int it = 0; it < max_iter && std::abs(r.fx) > ftol && std::abs(r.b - r.a) > xtol; ++it) {
    double c = (r.a * wb - r.b * wa) / (wb - wa);
    if (!(c > std::min(r.a, r.b) && c < std::max(r.a, r.b))) c = 0.5 * (r.a + r.b);
    const double fc = f(c);
    ++r.evaluations;
    if ((fc < 0.0) == (r.fb < 0.0)) {
      r.b = c, r.fb = fc, wb = fc;
      if (side == 1) wa *= 0.5;
      side = 1;
    } else {
      r.a = c, r.fa = fc, wa = fc;
      if (side == -1) wb *= 0.5;
      side = -1;
    }
    r.x = c;
    r.fx = fc;
  }
  return r;
}

}  // namespace rotpend
