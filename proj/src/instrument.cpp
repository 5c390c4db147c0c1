#include "homlab/instrument.hpp"

#include <cmath>
#include <stdexcept>

#include "homlab/errors.hpp"

namespace homlab::model {

std::vector<double> predict_binned(const CurveFn& curve, std::span<const double> bin_centers,
                                   const BinningSpec& spec) {
  if (!(spec.bin_width > 0.0)) throw DomainError("predict_binned: bin_width must be > 0");
  if (!(spec.irf_sigma >= 0.0)) throw DomainError("predict_binned: irf_sigma must be >= 0");
  const std::size_t nbins = bin_centers.size();
  if (nbins == 0) return {};
  for (std::size_t i = 1; i < nbins; ++i) {
    const double step = bin_centers[i] - bin_centers[i - 1];
    if (std::abs(step - spec.bin_width) > 1e-6 * spec.bin_width) {
      throw PreconditionError("predict_binned: bin centres must be uniformly spaced by bin_width");
    }
  }

  int m = std::max(1, spec.subsamples);
  if (spec.irf_sigma > 0.0) {
    m = std::max(m, static_cast<int>(std::ceil(2.0 * spec.bin_width / spec.irf_sigma)));
  }
  const double delta = spec.bin_width / m;
  const std::ptrdiff_t reach =
      spec.irf_sigma > 0.0 ? static_cast<std::ptrdiff_t>(std::ceil(5.0 * spec.irf_sigma / delta)) : 0;

  const std::size_t inner = nbins * static_cast<std::size_t>(m);
  const std::size_t total = inner + 2 * static_cast<std::size_t>(reach);
  const double first = bin_centers[0] - 0.5 * spec.bin_width + 0.5 * delta - reach * delta;
  std::vector<double> grid(total);
  for (std::size_t k = 0; k < total; ++k) grid[k] = first + static_cast<double>(k) * delta;
  const std::vector<double> values = curve(grid);
  if (values.size() != total) throw std::logic_error("predict_binned: curve returned wrong length");

  std::vector<double> kernel(2 * reach + 1, 1.0);
  if (reach > 0) {
    double sum = 0.0;
    for (std::ptrdiff_t k = -reach; k <= reach; ++k) {
      const double z = k * delta / spec.irf_sigma;
      kernel[k + reach] = std::exp(-0.5 * z * z);
      sum += kernel[k + reach];
    }
    for (auto& w : kernel) w /= sum;
  }

  std::vector<double> out(nbins, 0.0);
  for (std::size_t b = 0; b < nbins; ++b) {
    double acc = 0.0;
    for (int j = 0; j < m; ++j) {
      const std::size_t centre = static_cast<std::size_t>(reach) + b * m + j;
      double v = 0.0;
      for (std::ptrdiff_t k = -reach; k <= reach; ++k) v += kernel[k + reach] * values[centre + k];
      acc += v;
    }
    out[b] = acc / m;
  }
  return out;
}

double combined_irf_sigma(double jitter_a, double jitter_b) { return std::hypot(jitter_a, jitter_b); }

}  // namespace homlab::model
