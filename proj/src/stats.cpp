#include "elanova/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

namespace elanova {

double chi2_sf(double x, double df) {
  if (x <= 0) return 1.0;
  boost::math::chi_squared dist(df);
  return boost::math::cdf(boost::math::complement(dist, x));
}

double chi2_quantile(double p, double df) {
  boost::math::chi_squared dist(df);
  return boost::math::quantile(dist, p);
}

double noncentral_chi2_sf(double x, double df, double lambda) {
  if (lambda <= 0) return chi2_sf(x, df);
  boost::math::non_central_chi_squared dist(df, lambda);
  return boost::math::cdf(boost::math::complement(dist, x));
}

double normal_sf(double z) {
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

double normal_quantile(double p) {
  boost::math::normal dist;
  return boost::math::quantile(dist, p);
}

double ks_distance(std::vector<double> sample, double (*cdf)(double, double),
                   double cdf_param) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i], cdf_param);
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    d = std::max(d, std::max(std::abs(f - lo), std::abs(f - hi)));
  }
  return d;
}

}  // namespace elanova
