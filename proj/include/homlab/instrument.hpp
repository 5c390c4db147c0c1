#pragma once

// Forward model of what a histogramming instrument records for a given
// continuous correlation function: Gaussian timing response followed by
// integration over uniform bins.

#include <functional>
#include <span>
#include <vector>

namespace homlab::model {

/// Evaluates a correlation function on an arbitrary grid of delays [s].
using CurveFn = std::function<std::vector<double>(std::span<const double> taus)>;

struct BinningSpec {
  double bin_width = 512e-12;  // [s]
  double irf_sigma = 0.0;      // combined timing-jitter std-dev of the two channels [s]
  int subsamples = 8;          // midpoint samples per bin
};

/// Bin-averaged, IRF-convolved prediction at uniformly spaced bin centres.
std::vector<double> predict_binned(const CurveFn& curve, std::span<const double> bin_centers,
                                   const BinningSpec& spec);

/// Combined IRF width for a correlation between two detectors with Gaussian jitter.
double combined_irf_sigma(double jitter_a, double jitter_b);

}  // namespace homlab::model
