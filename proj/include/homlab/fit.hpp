#pragma once

// Damped Gauss-Newton (Levenberg-Marquardt) weighted least squares with
// central-difference Jacobians, box bounds and a fixed-parameter mask.

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace homlab::fit {

/// Writes model predictions for every abscissa in `x` into `out`.
using ModelFn =
    std::function<void(std::span<const double> params, std::span<const double> x, std::span<double> out)>;

struct FitProblem {
  ModelFn model;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> sigma;
  std::vector<double> initial;
  std::vector<double> lower;  // empty = unbounded
  std::vector<double> upper;
  std::vector<bool> fixed;    // empty = all free
  std::vector<std::string> names;
  std::vector<double> typical;  // magnitude used to size difference steps; empty = 1

  /// Fills defaults and throws DomainError on inconsistent sizes, sigma <= 0,
  /// initial values outside bounds or fewer data than free parameters.
  void validate();
  std::size_t free_count() const;
};

struct FitOptions {
  int max_iterations = 500;
  double step_tolerance = 1e-10;     // relative parameter step
  double initial_damping = 1e-3;
  double identifiability_condition = 1e8;
  double difference_step = 6e-6;     // relative central-difference step
};

enum class FitStatus { converged, max_iter, singular };

const char* to_string(FitStatus status);

struct FitResult {
  std::vector<std::string> names;
  std::vector<double> params;
  std::vector<double> sigmas;        // NaN for fixed or unidentifiable parameters
  Eigen::MatrixXd covariance;        // full size; zero rows/cols for fixed parameters
  double chi2 = 0.0;
  double chi2_reduced = 0.0;
  int iterations = 0;
  FitStatus status = FitStatus::converged;
  std::vector<std::string> unidentifiable;
  std::vector<double> objective_trace;  // chi2 after every accepted step, starting with the initial point
  std::map<std::string, double> derived;
  std::vector<std::string> flags;

  double param(const std::string& name) const;
  double sigma(const std::string& name) const;
  std::size_t index(const std::string& name) const;
};

/// Minimises sum(((y - f) / sigma)^2). Throws EvaluationError if the model
/// returns a non-finite value, naming the offending parameter vector.
FitResult lsq_fit(FitProblem problem, const FitOptions& options = {});

/// Central-difference Jacobian of the model (rows: data, cols: parameters),
/// one-sided at active bounds. Fixed parameters get zero columns.
Eigen::MatrixXd numeric_jacobian(const FitProblem& problem, std::span<const double> params,
                                 double relative_step = 6e-6);

/// Forward-difference Jacobian, used as an independent check of numeric_jacobian.
Eigen::MatrixXd forward_jacobian(const FitProblem& problem, std::span<const double> params,
                                 double relative_step = 1e-7);

/// Weighted sum of squared residuals at `params`.
double objective(const FitProblem& problem, std::span<const double> params);

/// params, sigmas, covariance, chi2_reduced, status, derived, ...
nlohmann::json to_json(const FitResult& result);

/// Wraps a scalar model f(params, x) as a ModelFn.
ModelFn pointwise(std::function<double(std::span<const double>, double)> f);

}  // namespace homlab::fit
