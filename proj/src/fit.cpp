#include "homlab/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "homlab/errors.hpp"

namespace homlab::fit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> evaluate(const FitProblem& problem, std::span<const double> params) {
  std::vector<double> out(problem.x.size());
  problem.model(params, problem.x, out);
  for (double v : out) {
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "model returned a non-finite value at params [";
      for (std::size_t i = 0; i < params.size(); ++i) {
        msg << (i ? ", " : "") << (problem.names.empty() ? "p" + std::to_string(i) : problem.names[i]) << "="
            << params[i];
      }
      msg << "]";
      throw EvaluationError(msg.str());
    }
  }
  return out;
}

double weighted_chi2(const FitProblem& problem, const std::vector<double>& prediction) {
  double sum = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double r = (problem.y[i] - prediction[i]) / problem.sigma[i];
    sum += r * r;
  }
  return sum;
}

void project(const FitProblem& problem, std::vector<double>& p) {
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::clamp(p[j], problem.lower[j], problem.upper[j]);
}

std::vector<std::size_t> free_indices(const FitProblem& problem) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < problem.initial.size(); ++j) {
    if (!problem.fixed[j]) idx.push_back(j);
  }
  return idx;
}

// Jacobian of the weighted residual prediction f_i / sigma_i over free parameters.
Eigen::MatrixXd weighted_free_jacobian(const FitProblem& problem, std::span<const double> params,
                                       const std::vector<std::size_t>& free, double rel_step) {
  const Eigen::MatrixXd full = numeric_jacobian(problem, params, rel_step);
  Eigen::MatrixXd j(full.rows(), static_cast<Eigen::Index>(free.size()));
  for (Eigen::Index c = 0; c < j.cols(); ++c) j.col(c) = full.col(static_cast<Eigen::Index>(free[c]));
  for (Eigen::Index r = 0; r < j.rows(); ++r) j.row(r) /= problem.sigma[r];
  return j;
}

}  // namespace

const char* to_string(FitStatus status) {
  switch (status) {
    case FitStatus::converged:
      return "converged";
    case FitStatus::max_iter:
      return "max_iter";
    case FitStatus::singular:
      return "singular";
  }
  return "unknown";
}

void FitProblem::validate() {
  const std::size_t n = initial.size();
  if (!model) throw DomainError("FitProblem: model is empty");
  if (n == 0) throw DomainError("FitProblem: no parameters");
  if (y.size() != x.size() || sigma.size() != x.size()) throw DomainError("FitProblem: x, y, sigma sizes differ");
  if (lower.empty()) lower.assign(n, -std::numeric_limits<double>::infinity());
  if (upper.empty()) upper.assign(n, std::numeric_limits<double>::infinity());
  if (fixed.empty()) fixed.assign(n, false);
  if (typical.empty()) typical.assign(n, 1.0);
  if (names.empty()) {
    for (std::size_t j = 0; j < n; ++j) names.push_back("p" + std::to_string(j));
  }
  if (lower.size() != n || upper.size() != n || fixed.size() != n || typical.size() != n || names.size() != n) {
    throw DomainError("FitProblem: per-parameter vectors have inconsistent sizes");
  }
  for (double s : sigma) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("FitProblem: sigma must be > 0");
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (!(initial[j] >= lower[j] && initial[j] <= upper[j])) {
      throw DomainError("FitProblem: initial value of " + names[j] + " is outside its bounds");
    }
  }
  if (x.size() < free_count()) throw DomainError("FitProblem: fewer data points than free parameters");
}

std::size_t FitProblem::free_count() const {
  return static_cast<std::size_t>(std::count(fixed.begin(), fixed.end(), false));
}

double FitResult::param(const std::string& name) const { return params[index(name)]; }
double FitResult::sigma(const std::string& name) const { return sigmas[index(name)]; }

std::size_t FitResult::index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("FitResult: no parameter named " + name);
  return static_cast<std::size_t>(it - names.begin());
}

double objective(const FitProblem& problem, std::span<const double> params) {
  return weighted_chi2(problem, evaluate(problem, params));
}

Eigen::MatrixXd numeric_jacobian(const FitProblem& problem, std::span<const double> params,
                                 double relative_step) {
  const auto rows = static_cast<Eigen::Index>(problem.x.size());
  const auto cols = static_cast<Eigen::Index>(params.size());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(rows, cols);
  std::vector<double> p(params.begin(), params.end());
  for (Eigen::Index c = 0; c < cols; ++c) {
    const auto j = static_cast<std::size_t>(c);
    if (!problem.fixed.empty() && problem.fixed[j]) continue;
    const double h = relative_step * std::max(std::abs(params[j]), problem.typical.empty() ? 1.0 : problem.typical[j]);
    const double lo = problem.lower.empty() ? -std::numeric_limits<double>::infinity() : problem.lower[j];
    const double hi = problem.upper.empty() ? std::numeric_limits<double>::infinity() : problem.upper[j];
    double up = params[j] + h;
    double down = params[j] - h;
    if (up > hi) up = params[j];
    if (down < lo) down = params[j];
    if (up == down) continue;
    p[j] = up;
    const auto f_up = evaluate(problem, p);
    p[j] = down;
    const auto f_down = evaluate(problem, p);
    p[j] = params[j];
    for (Eigen::Index r = 0; r < rows; ++r) jac(r, c) = (f_up[r] - f_down[r]) / (up - down);
  }
  return jac;
}

Eigen::MatrixXd forward_jacobian(const FitProblem& problem, std::span<const double> params, double relative_step) {
  const auto rows = static_cast<Eigen::Index>(problem.x.size());
  const auto cols = static_cast<Eigen::Index>(params.size());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(rows, cols);
  std::vector<double> p(params.begin(), params.end());
  const auto base = evaluate(problem, p);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const auto j = static_cast<std::size_t>(c);
    if (!problem.fixed.empty() && problem.fixed[j]) continue;
    const double h = relative_step * std::max(std::abs(params[j]), problem.typical.empty() ? 1.0 : problem.typical[j]);
    p[j] = params[j] + h;
    const auto f = evaluate(problem, p);
    p[j] = params[j];
    for (Eigen::Index r = 0; r < rows; ++r) jac(r, c) = (f[r] - base[r]) / h;
  }
  return jac;
}

FitResult lsq_fit(FitProblem problem, const FitOptions& options) {
  problem.validate();
  const std::size_t n = problem.initial.size();
  const auto free = free_indices(problem);
  const auto nfree = static_cast<Eigen::Index>(free.size());

  FitResult result;
  result.names = problem.names;
  std::vector<double> p = problem.initial;
  project(problem, p);

  double chi2 = objective(problem, p);
  result.objective_trace.push_back(chi2);
  double damping = options.initial_damping;
  FitStatus status = FitStatus::max_iter;
  int small_decrease = 0;
  int iter = 0;

  for (iter = 1; iter <= options.max_iterations; ++iter) {
    const Eigen::MatrixXd jw = weighted_free_jacobian(problem, p, free, options.difference_step);
    const auto prediction = evaluate(problem, p);
    Eigen::VectorXd r(jw.rows());
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = (problem.y[i] - prediction[i]) / problem.sigma[i];
    const Eigen::MatrixXd normal = jw.transpose() * jw;
    const Eigen::VectorXd gradient = jw.transpose() * r;
    if (normal.diagonal().maxCoeff() <= 0.0) {
      status = FitStatus::singular;
      break;
    }
    Eigen::VectorXd scale = normal.diagonal();
    const double floor_value = 1e-12 * scale.maxCoeff();
    for (Eigen::Index k = 0; k < scale.size(); ++k) scale(k) = std::max(scale(k), floor_value);

    // Parameters sitting on a bound with the gradient pointing outward are held this iteration.
    std::vector<bool> held(free.size(), false);
    for (Eigen::Index k = 0; k < nfree; ++k) {
      const std::size_t j = free[k];
      held[k] = (p[j] <= problem.lower[j] && gradient(k) < 0.0) || (p[j] >= problem.upper[j] && gradient(k) > 0.0);
    }

    bool accepted = false;
    bool stuck = false;
    std::vector<double> trial = p;
    double trial_chi2 = chi2;
    double step_norm = 0.0;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::MatrixXd damped = normal;
      damped.diagonal() += damping * scale;
      Eigen::VectorXd rhs = gradient;
      for (Eigen::Index k = 0; k < nfree; ++k) {
        if (!held[k]) continue;
        damped.row(k).setZero();
        damped.col(k).setZero();
        damped(k, k) = 1.0;
        rhs(k) = 0.0;
      }
      const Eigen::VectorXd delta = damped.ldlt().solve(rhs);
      if (!delta.allFinite()) {
        status = FitStatus::singular;
        stuck = true;
        break;
      }
      trial = p;
      for (Eigen::Index k = 0; k < nfree; ++k) trial[free[k]] += delta(k);
      project(problem, trial);
      step_norm = 0.0;
      double pnorm = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        step_norm += (trial[j] - p[j]) * (trial[j] - p[j]);
        pnorm += p[j] * p[j];
      }
      step_norm = std::sqrt(step_norm);
      if (step_norm <= options.step_tolerance * (std::sqrt(pnorm) + options.step_tolerance)) {
        status = FitStatus::converged;
        stuck = true;
        break;
      }
      trial_chi2 = objective(problem, trial);
      if (trial_chi2 < chi2) {
        accepted = true;
        damping = std::max(damping * 0.1, 1e-15);
        break;
      }
      damping *= 10.0;
      if (damping > 1e16) {
        status = FitStatus::converged;
        stuck = true;
        break;
      }
    }
    if (stuck) break;
    if (!accepted) {
      status = FitStatus::converged;
      break;
    }
    const double decrease = chi2 - trial_chi2;
    p = trial;
    chi2 = trial_chi2;
    result.objective_trace.push_back(chi2);
    double pnorm = 0.0;
    for (double v : p) pnorm += v * v;
    if (step_norm <= options.step_tolerance * (std::sqrt(pnorm) + options.step_tolerance)) {
      status = FitStatus::converged;
      break;
    }
    small_decrease = decrease <= 1e-12 * std::max(chi2, 1e-300) ? small_decrease + 1 : 0;
    if (small_decrease >= 3 || chi2 == 0.0) {
      status = FitStatus::converged;
      break;
    }
  }
  result.iterations = std::min(iter, options.max_iterations);
  result.status = status;
  result.params = p;
  result.chi2 = chi2;
  const double dof = static_cast<double>(problem.x.size()) - static_cast<double>(nfree);
  result.chi2_reduced = dof > 0.0 ? chi2 / dof : kNaN;

  // Covariance from the scaled normal matrix; eigen-directions weaker than
  // 1/identifiability_condition of the strongest mark their parameters unidentifiable.
  result.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  result.sigmas.assign(n, kNaN);
  if (nfree > 0) {
    const Eigen::MatrixXd jw = weighted_free_jacobian(problem, p, free, options.difference_step);
    const Eigen::MatrixXd normal = jw.transpose() * jw;
    Eigen::VectorXd d = normal.diagonal();
    std::vector<bool> flagged(free.size(), false);
    Eigen::VectorXd inv_sqrt(nfree);
    for (Eigen::Index k = 0; k < nfree; ++k) {
      if (d(k) <= 0.0) {
        flagged[k] = true;
        inv_sqrt(k) = 0.0;
      } else {
        inv_sqrt(k) = 1.0 / std::sqrt(d(k));
      }
    }
    const Eigen::MatrixXd scaled = inv_sqrt.asDiagonal() * normal * inv_sqrt.asDiagonal();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    const Eigen::VectorXd values = eig.eigenvalues();
    const double top = values.maxCoeff();
    Eigen::MatrixXd pinv = Eigen::MatrixXd::Zero(nfree, nfree);
    for (Eigen::Index e = 0; e < nfree; ++e) {
      const Eigen::VectorXd v = eig.eigenvectors().col(e);
      if (top <= 0.0 || values(e) * options.identifiability_condition < top) {
        for (Eigen::Index k = 0; k < nfree; ++k) {
          if (std::abs(v(k)) > 0.1) flagged[k] = true;
        }
        continue;
      }
      pinv += v * v.transpose() / values(e);
    }
    const Eigen::MatrixXd cov = inv_sqrt.asDiagonal() * pinv * inv_sqrt.asDiagonal();
    for (Eigen::Index a = 0; a < nfree; ++a) {
      for (Eigen::Index b = 0; b < nfree; ++b) {
        result.covariance(static_cast<Eigen::Index>(free[a]), static_cast<Eigen::Index>(free[b])) = cov(a, b);
      }
      if (flagged[a]) {
        result.unidentifiable.push_back(problem.names[free[a]]);
      } else {
        result.sigmas[free[a]] = std::sqrt(std::max(cov(a, a), 0.0));
      }
    }
  }
  return result;
}

nlohmann::json to_json(const FitResult& result) {
  nlohmann::json j;
  j["parameter_order"] = result.names;
  j["params"] = nlohmann::json::object();
  j["sigmas"] = nlohmann::json::object();
  for (std::size_t i = 0; i < result.names.size(); ++i) {
    j["params"][result.names[i]] = result.params[i];
    j["sigmas"][result.names[i]] =
        std::isfinite(result.sigmas[i]) ? nlohmann::json(result.sigmas[i]) : nlohmann::json(nullptr);
  }
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index r = 0; r < result.covariance.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < result.covariance.cols(); ++c) row.push_back(result.covariance(r, c));
    cov.push_back(row);
  }
  j["covariance"] = cov;
  j["chi2"] = result.chi2;
  j["chi2_reduced"] = std::isfinite(result.chi2_reduced) ? nlohmann::json(result.chi2_reduced) : nlohmann::json(nullptr);
  j["iterations"] = result.iterations;
  j["status"] = to_string(result.status);
  j["unidentifiable"] = result.unidentifiable;
  j["flags"] = result.flags;
  j["derived"] = nlohmann::json::object();
  for (const auto& [k, v] : result.derived) {
    j["derived"][k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  }
  return j;
}

ModelFn pointwise(std::function<double(std::span<const double>, double)> f) {
  return [f = std::move(f)](std::span<const double> params, std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(params, x[i]);
  };
}

}  // namespace homlab::fit
