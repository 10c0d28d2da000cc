#pragma once
// Kernel primitives: the Epanechnikov kernel, its self-convolution K^(2)_c for
// bandwidth ratio c, and the double convolution constant K^(4)_c(0) used by the
// variance of the integrated curve statistic. Convolutions are computed by
// adaptive Simpson quadrature; closed forms exist for c=1 and are used as test
// oracles, not here.

#include <functional>

namespace elanova {

enum class KernelFamily { Epanechnikov };

struct KernelSpec {
  KernelFamily family = KernelFamily::Epanechnikov;
};

// K(u); compactly supported on [-1,1], integrates to one
double kernel_eval(const KernelSpec& spec, double u);

// adaptive Simpson integral of f over [a,b] to absolute tolerance tol
double adaptive_simpson(const std::function<double(double)>& f, double a,
                        double b, double tol);

struct KernelConvolutions {
  double c = 1.0;
  std::function<double(double)> K2_c;  // K^(2)_c(t) = int K(w) K(t - c w) dw
  double K2_0 = 0.0;                   // K^(2)_1(0) = int K(w)^2 dw
  double K4_c0 = 0.0;  // K^(4)_c(0) = int K^(2)_c(w sqrt(c)) K^(2)_{1/c}(w / sqrt(c)) dw
};

// tol is the absolute quadrature tolerance for K4_c0 (inner integrals tighter)
KernelConvolutions kernel_convolutions(const KernelSpec& spec, double c,
                                       double tol = 1e-9);

}  // namespace elanova
