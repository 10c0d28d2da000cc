#include "elanova/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace elanova {

double kernel_eval(const KernelSpec& spec, double u) {
  switch (spec.family) {
    case KernelFamily::Epanechnikov:
      return std::abs(u) >= 1.0 ? 0.0 : 0.75 * (1.0 - u * u);
  }
  return 0.0;
}

namespace {

double simpson(const std::function<double(double)>& f, double a, double fa,
               double b, double fb, double m, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_step(const std::function<double(double)>& f, double a,
                     double fa, double b, double fb, double m, double fm,
                     double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(f, a, fa, m, fm, lm, flm);
  const double right = simpson(f, m, fm, b, fb, rm, frm);
  const double delta = left + right - whole;
  if (depth > 48 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth + 1) +
         adaptive_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth + 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a,
                        double b, double tol) {
  if (!(b > a)) return 0.0;
  // seed with a fixed coarse partition so symmetric integrands with a flat
  // coarse Simpson estimate still get refined
  const int coarse = 8;
  double total = 0.0;
  const double hstep = (b - a) / coarse;
  for (int i = 0; i < coarse; ++i) {
    const double x0 = a + i * hstep, x1 = x0 + hstep, xm = 0.5 * (x0 + x1);
    const double f0 = f(x0), f1 = f(x1), fm = f(xm);
    const double whole = simpson(f, x0, f0, x1, f1, xm, fm);
    total += adaptive_step(f, x0, f0, x1, f1, xm, fm, whole, tol / coarse, 0);
  }
  return total;
}

KernelConvolutions kernel_convolutions(const KernelSpec& spec, double c,
                                       double tol) {
  if (!(c > 0)) throw std::invalid_argument("bandwidth ratio must be positive");
  KernelConvolutions out;
  out.c = c;
  const double inner_tol = std::min(tol, 1e-9) * 1e-2;
  auto K2 = [spec, inner_tol](double t, double cc) {
    // support of w: |w|<=1 and |t - cc w|<=1
    const double lo = std::max(-1.0, (t - 1.0) / cc);
    const double hi = std::min(1.0, (t + 1.0) / cc);
    if (lo >= hi) return 0.0;
    return adaptive_simpson(
        [&](double w) {
          return kernel_eval(spec, w) * kernel_eval(spec, t - cc * w);
        },
        lo, hi, inner_tol);
  };
  out.K2_c = [K2, c](double t) { return K2(t, c); };
  out.K2_0 = K2(0.0, 1.0);
  const double sc = std::sqrt(c);
  const double lim = (1.0 + c) / sc;  // support bound for both factors
  out.K4_c0 = adaptive_simpson(
      [&](double w) { return K2(w * sc, c) * K2(w / sc, 1.0 / c); }, -lim, lim,
      tol);
  return out;
}

}  // namespace elanova
