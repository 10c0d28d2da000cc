#pragma once
// Thin wrappers over Boost.Math reference distributions plus small helpers
// shared by the test statistics (tail probabilities, quantiles, KS distance).

#include <cstddef>
#include <vector>

namespace elanova {

double chi2_sf(double x, double df);        // P(X > x)
double chi2_quantile(double p, double df);  // inverse CDF
double noncentral_chi2_sf(double x, double df, double lambda);
double normal_sf(double z);       // upper tail of N(0,1)
double normal_quantile(double p);

// two-sided Kolmogorov distance between the sample ECDF and a reference CDF
double ks_distance(std::vector<double> sample, double (*cdf)(double, double),
                   double cdf_param);

}  // namespace elanova
