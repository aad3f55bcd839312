#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "dce/error.hpp"
#include "dce/estimation.hpp"
#include "dce/rng.hpp"
#include "logit_kernel.hpp"
#include "parallel.hpp"

namespace dce {

std::vector<double> halton_sequence(int n, int base, int skip) {
  if (n < 1) throw DomainError("halton_sequence needs n >= 1");
  if (base < 2) throw DomainError("halton base must be a prime >= 2");
  for (int d = 2; d * d <= base; ++d) {
    if (base % d == 0) throw DomainError(fmt::format("halton base {} is not prime", base));
  }
  if (skip < 0) throw DomainError("halton skip must be non-negative");
  std::vector<double> out;
  out.reserve(static_cast<size_t>(n));
  for (long long i = skip + 1; i <= static_cast<long long>(skip) + n; ++i) {
    double f = 1.0;
    double r = 0.0;
    for (long long j = i; j > 0; j /= base) {
      f /= base;
      r += f * static_cast<double>(j % base);
    }
    out.push_back(r);
  }
  return out;
}

double normal_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError(fmt::format("normal_quantile needs 0 < u < 1, got {}", u));
  // Acklam's rational approximation followed by one Halley step on erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double low = 0.02425;
  double x = 0.0;
  if (u < low) {
    const double q = std::sqrt(-2.0 * std::log(u));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (u <= 1.0 - low) {
    const double q = u - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-u));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - u;
  const double step = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x -= step / (1.0 + 0.5 * x * step);
  return x;
}

std::vector<int> first_primes(int n) {
  std::vector<int> primes;
  for (int candidate = 2; static_cast<int>(primes.size()) < n; ++candidate) {
    bool prime = true;
    for (int p : primes) {
      if (p * p > candidate) break;
      if (candidate % p == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(candidate);
  }
  return primes;
}

std::string to_string(DrawKind kind) { return kind == DrawKind::halton ? "halton" : "pseudo"; }

DrawKind parse_draw_kind(const std::string& text) {
  if (text == "halton") return DrawKind::halton;
  if (text == "pseudo") return DrawKind::pseudo;
  throw DomainError(fmt::format("unknown draw kind '{}' (expected halton or pseudo)", text));
}

Eigen::MatrixXd standard_normal_draws(int n_people, const RandomCoefSpec& spec, std::uint64_t seed) {
  if (spec.n_draws < 1) throw DomainError("need at least one simulation draw");
  const int n_random = static_cast<int>(spec.names.size());
  const int total = n_people * spec.n_draws;
  Eigen::MatrixXd z(total, n_random);
  if (total == 0 || n_random == 0) return z;
  if (spec.draw_kind == DrawKind::halton) {
    const auto primes = first_primes(n_random);
    for (int k = 0; k < n_random; ++k) {
      const auto seq = halton_sequence(total, primes[k], spec.burn_in);
      for (int i = 0; i < total; ++i) z(i, k) = normal_quantile(seq[i]);
    }
  } else {
    std::normal_distribution<double> normal;
    for (int n = 0; n < n_people; ++n) {
      auto rng = make_stream(seed, static_cast<std::uint64_t>(n));
      for (int r = 0; r < spec.n_draws; ++r) {
        for (int k = 0; k < n_random; ++k) z(n * spec.n_draws + r, k) = normal(rng);
      }
    }
  }
  return z;
}

SimulatedLogLik xlm_simulated_loglik(const Eigen::Ref<const Eigen::VectorXd>& b,
                                     const Eigen::Ref<const Eigen::VectorXd>& sigma, const PanelData& data,
                                     const std::vector<int>& random_columns, const Eigen::MatrixXd& draws,
                                     int n_draws, int threads) {
  const int k = data.n_params();
  const int n_random = static_cast<int>(random_columns.size());
  if (b.size() != k) throw DomainError(fmt::format("b has length {}, data has {} columns", b.size(), k));
  if (sigma.size() != n_random) throw DomainError("sigma length does not match the random coefficients");
  if (n_draws < 1) throw DomainError("need at least one simulation draw");
  if (draws.rows() != static_cast<Eigen::Index>(data.n_people()) * n_draws || draws.cols() != n_random) {
    throw DomainError(fmt::format("draw matrix is {}x{}, expected {}x{}", draws.rows(), draws.cols(),
                                  static_cast<long long>(data.n_people()) * n_draws, n_random));
  }
  const int n_people = data.n_people();
  std::vector<double> person_ll(static_cast<size_t>(n_people));
  Eigen::MatrixXd person_grad(k + n_random, n_people);

  detail::parallel_for(n_people, threads, [&](int begin, int end) {
    std::vector<double> prob;
    std::vector<double> log_p(static_cast<size_t>(n_draws));
    Eigen::MatrixXd scores(k, n_draws);
    Eigen::VectorXd beta(k);
    for (int n = begin; n < end; ++n) {
      for (int r = 0; r < n_draws; ++r) {
        beta = b;
        const Eigen::Index draw_row = static_cast<Eigen::Index>(n) * n_draws + r;
        for (int q = 0; q < n_random; ++q) beta(random_columns[q]) += sigma(q) * draws(draw_row, q);
        double lp = 0.0;
        auto score = scores.col(r);
        score.setZero();
        for (int g = data.person_begin(n); g < data.person_begin(n + 1); ++g) {
          const int first = data.group_begin(g);
          const int size = data.group_size(g);
          lp += detail::group_log_prob(data.X(), first, size, data.chosen(g), beta.data(), prob);
          score += data.X().row(first + data.chosen(g)).transpose();
          for (int j = 0; j < size; ++j) score -= prob[j] * data.X().row(first + j).transpose();
        }
        log_p[r] = lp;
      }
      const double m = *std::max_element(log_p.begin(), log_p.end());
      if (!std::isfinite(m)) {
        throw NumericError(fmt::format(
            "simulated probability underflows for personid {}; increase the number of draws or rescale the data",
            data.person_id(n)));
      }
      double w_sum = 0.0;
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(k + n_random);
      for (int r = 0; r < n_draws; ++r) {
        const double w = std::exp(log_p[r] - m);
        w_sum += w;
        grad.head(k) += w * scores.col(r);
        const Eigen::Index draw_row = static_cast<Eigen::Index>(n) * n_draws + r;
        for (int q = 0; q < n_random; ++q) grad(k + q) += w * scores(random_columns[q], r) * draws(draw_row, q);
      }
      person_ll[n] = m + std::log(w_sum / n_draws);
      person_grad.col(n) = grad / w_sum;
    }
  });

  SimulatedLogLik out;
  out.gradient = Eigen::VectorXd::Zero(k + n_random);
  for (int n = 0; n < n_people; ++n) {
    out.value += person_ll[n];
    out.gradient += person_grad.col(n);
  }
  return out;
}

namespace {

std::vector<int> resolve_random_columns(const PanelData& data, const RandomCoefSpec& spec) {
  std::vector<int> cols;
  std::set<std::string> seen;
  for (const auto& name : spec.names) {
    if (!seen.insert(name).second) throw DomainError(fmt::format("random coefficient '{}' listed twice", name));
    const auto& names = data.column_names();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw DomainError(fmt::format("random coefficient '{}' is not a data column", name));
    cols.push_back(static_cast<int>(it - names.begin()));
  }
  return cols;
}

}  // namespace

SimulatedLogLik xlm_simulated_loglik(const Eigen::Ref<const Eigen::VectorXd>& b,
                                     const Eigen::Ref<const Eigen::VectorXd>& sigma, const ChoiceDataLong& data,
                                     const RandomCoefSpec& spec, std::uint64_t seed) {
  if ((sigma.array() < 0.0).any()) throw DomainError("random-coefficient spreads must be non-negative");
  const PanelData panel(data);
  const auto cols = resolve_random_columns(panel, spec);
  const Eigen::MatrixXd z = standard_normal_draws(panel.n_people(), spec, seed);
  return xlm_simulated_loglik(b, sigma, panel, cols, z, spec.n_draws);
}

ModelFit fit_xlm(const ChoiceDataLong& data, const RandomCoefSpec& spec, std::uint64_t seed, const XlmOptions& options) {
  const PanelData panel(data);
  const auto cols = resolve_random_columns(panel, spec);
  if (cols.empty()) throw DomainError("mixed logit needs at least one random coefficient");
  const ModelFit clm = fit_clm(data);
  const Eigen::MatrixXd z = standard_normal_draws(panel.n_people(), spec, seed);
  const int k = panel.n_params();
  const int n_random = static_cast<int>(cols.size());
  const int dim = k + n_random;

  // Minimize f = -SLL over theta = (b, sigma).
  auto evaluate = [&](const Eigen::VectorXd& theta) {
    SimulatedLogLik s =
        xlm_simulated_loglik(theta.head(k), theta.tail(n_random), panel, cols, z, spec.n_draws, options.threads);
    s.value = -s.value;
    s.gradient = -s.gradient;
    return s;
  };

  Eigen::VectorXd theta(dim);
  theta.head(k) = clm.coef;
  theta.tail(n_random).setConstant(options.initial_sd);

  // Start the inverse-Hessian approximation from the CLM curvature.
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Zero(dim, dim);
  const Eigen::MatrixXd clm_neg_h = -clm_loglik(clm.coef, panel).hessian;
  h_inv.topLeftCorner(k, k) = clm_neg_h.inverse();
  for (int q = 0; q < n_random; ++q) h_inv(k + q, k + q) = h_inv(cols[q], cols[q]);
  const Eigen::MatrixXd h_inv0 = h_inv;

  ModelFit fit;
  fit.kind = ModelKind::xlm;
  fit.names = panel.column_names();
  fit.n_obs = panel.n_groups();
  fit.n_respondents = panel.n_people();
  fit.seed = seed;
  fit.n_draws = spec.n_draws;
  fit.draw_kind = to_string(spec.draw_kind);
  fit.null_loglik = clm.null_loglik;

  SimulatedLogLik cur = evaluate(theta);
  for (int it = 0; it < options.max_iterations; ++it) {
    if (cur.gradient.lpNorm<Eigen::Infinity>() < options.tolerance) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd dir = -h_inv * cur.gradient;
    double slope = cur.gradient.dot(dir);
    if (!(slope < 0.0)) {
      h_inv = h_inv0;
      dir = -h_inv * cur.gradient;
      slope = cur.gradient.dot(dir);
    }
    const double resolution = 1e-11 * (1.0 + std::abs(cur.value));
    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd next_theta;
    SimulatedLogLik next;
    for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
      next_theta = theta + t * dir;
      try {
        next = evaluate(next_theta);
      } catch (const NumericError&) {
        continue;
      }
      if (!std::isfinite(next.value)) continue;
      if (next.value <= cur.value + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      // Below the rounding resolution of f, judge the step by the gradient.
      if (-t * slope < resolution && next.value <= cur.value + resolution &&
          next.gradient.lpNorm<Eigen::Infinity>() < cur.gradient.lpNorm<Eigen::Infinity>()) {
        accepted = true;
        break;
      }
    }
    fit.iterations = it + 1;
    if (!accepted) {
      // Armijo cannot resolve progress below rounding; accept if the gradient shrank.
      if (std::isfinite(next.value) && next.value <= cur.value + 1e-12 * (1.0 + std::abs(cur.value)) &&
          next.gradient.lpNorm<Eigen::Infinity>() < cur.gradient.lpNorm<Eigen::Infinity>()) {
        accepted = true;
      } else if (h_inv != h_inv0) {
        h_inv = h_inv0;
        continue;
      } else {
        break;
      }
    }
    const Eigen::VectorXd s = next_theta - theta;
    const Eigen::VectorXd y = next.gradient - cur.gradient;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim, dim);
      h_inv = (eye - rho * s * y.transpose()) * h_inv * (eye - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    theta = next_theta;
    cur = std::move(next);
  }
  if (!fit.converged && cur.gradient.lpNorm<Eigen::Infinity>() < options.tolerance) fit.converged = true;

  fit.loglik = -cur.value;
  fit.gradient_norm = cur.gradient.lpNorm<Eigen::Infinity>();
  fit.coef = theta.head(k);
  fit.sd_names = spec.names;
  fit.sd = theta.tail(n_random).cwiseAbs();

  // Numerical Hessian of the log-likelihood from central differences of the
  // analytic gradient.
  Eigen::MatrixXd hess(dim, dim);
  for (int j = 0; j < dim; ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta(j)));
    Eigen::VectorXd up = theta;
    Eigen::VectorXd down = theta;
    up(j) += h;
    down(j) -= h;
    hess.col(j) = -(evaluate(up).gradient - evaluate(down).gradient) / (2.0 * h);
  }
  hess = 0.5 * (hess + hess.transpose()).eval();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd se = Eigen::VectorXd::Constant(dim, nan);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(-hess);
  if (lu.isInvertible()) {
    const Eigen::MatrixXd cov = lu.inverse();
    for (int j = 0; j < dim; ++j) {
      if (cov(j, j) > 0.0) se(j) = std::sqrt(cov(j, j));
    }
  } else {
    fit.warnings.push_back("numerical Hessian is singular; standard errors unavailable");
  }
  if (!se.allFinite() && lu.isInvertible()) {
    fit.warnings.push_back("numerical Hessian is not negative definite; some standard errors unavailable");
  }
  fit.se = se.head(k);
  fit.sd_se = se.tail(n_random);
  fit.p_value.resize(k);
  fit.sd_p_value.resize(n_random);
  for (int j = 0; j < k; ++j) fit.p_value(j) = normal_p_value(fit.coef(j), fit.se(j));
  for (int q = 0; q < n_random; ++q) fit.sd_p_value(q) = normal_p_value(fit.sd(q), fit.sd_se(q));
  if (!fit.converged) {
    fit.warnings.push_back(fmt::format("BFGS stopped after {} iterations with gradient sup-norm {:.3g}",
                                       fit.iterations, fit.gradient_norm));
  }
  return fit;
}

}  // namespace dce
