#include <limits>

#include "doctest.h"
#include "dce/error.hpp"
#include "dce/estimation.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "sim_fixture.hpp"

using namespace dce;

namespace {

// Inverse normal CDF by bisection on erfc in long double.
double quantile_oracle(double u) {
  long double lo = -40, hi = 40;
  for (int i = 0; i < 200; ++i) {
    const long double mid = (lo + hi) / 2;
    const long double cdf = 0.5L * std::erfc(-mid / std::sqrt(2.0L));
    (cdf < u ? lo : hi) = mid;
  }
  return static_cast<double>((lo + hi) / 2);
}

ChoiceDataLong small_panel(std::uint64_t seed, int people = 40) {
  return test::simulate_long(test::fixed_worked_design(), test::table_coefficients(), Eigen::VectorXd::Zero(9),
                             people, seed);
}

}  // namespace

TEST_CASE("halton sequence values") {
  CHECK(halton_sequence(4, 2) == std::vector<double>{0.5, 0.25, 0.75, 0.125});
  const auto b3 = halton_sequence(3, 3);
  CHECK(b3[0] == doctest::Approx(1.0 / 3).epsilon(1e-16));
  CHECK(b3[1] == doctest::Approx(2.0 / 3).epsilon(1e-16));
  CHECK(b3[2] == doctest::Approx(1.0 / 9).epsilon(1e-16));
  CHECK(halton_sequence(10, 2)[9] == 5.0 / 16);
  CHECK(halton_sequence(1, 2, 9)[0] == 5.0 / 16);
  for (int base : {2, 3, 5, 7, 11, 13}) {
    const auto seq = halton_sequence(500, base, 10);
    for (int i = 0; i < 500; ++i) {
      CHECK(seq[i] == doctest::Approx(static_cast<double>(oracle::radical_inverse(i + 11, base))).epsilon(1e-15));
      CHECK(seq[i] > 0.0);
      CHECK(seq[i] < 1.0);
    }
  }
  CHECK_THROWS_AS(halton_sequence(3, 4), DomainError);
  CHECK_THROWS_AS(halton_sequence(0, 2), DomainError);
  CHECK(first_primes(8) == std::vector<int>{2, 3, 5, 7, 11, 13, 17, 19});
}

TEST_CASE("normal_quantile") {
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::abs(normal_quantile(0.975) - 1.959964) < 1e-5);
  for (double u : {1e-12, 1e-6, 0.001, 0.02, 0.02425, 0.1, 0.3, 0.6, 0.9, 0.975, 0.999, 1 - 1e-9}) {
    CHECK(std::abs(normal_quantile(u) - quantile_oracle(u)) < 1e-9);
  }
  // Dyadic points so that 1 - u is exact.
  for (int i = 1; i < 1024; i += 7) {
    const double u = i / 1024.0;
    CHECK(normal_quantile(u) == doctest::Approx(-normal_quantile(1 - u)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
  CHECK_THROWS_AS(normal_quantile(1.0), DomainError);
}

TEST_CASE("standard_normal_draws layout") {
  RandomCoefSpec spec;
  spec.names = {"a", "b", "c"};
  spec.n_draws = 4;
  const auto z = standard_normal_draws(3, spec, 0);
  REQUIRE(z.rows() == 12);
  REQUIRE(z.cols() == 3);
  const int bases[] = {2, 3, 5};
  for (int i = 0; i < 12; ++i) {
    for (int k = 0; k < 3; ++k) {
      const double u = static_cast<double>(oracle::radical_inverse(10 + i + 1, bases[k]));
      CHECK(z(i, k) == doctest::Approx(quantile_oracle(u)).epsilon(1e-9));
    }
  }
  spec.draw_kind = DrawKind::pseudo;
  const auto p1 = standard_normal_draws(3, spec, 5);
  CHECK(p1 == standard_normal_draws(3, spec, 5));
  CHECK(p1 != standard_normal_draws(3, spec, 6));
  CHECK(parse_draw_kind("pseudo") == DrawKind::pseudo);
  CHECK_THROWS_AS(parse_draw_kind("sobol"), DomainError);
}

TEST_CASE("simulated log-likelihood degenerates to the conditional logit") {
  const auto data = small_panel(1);
  const PanelData panel(data);
  Eigen::VectorXd b = test::table_coefficients() * 0.8;
  const std::vector<int> cols{1, 2, 3, 4, 5, 6, 7, 8};
  RandomCoefSpec spec;
  spec.names = {"Var11", "Var12", "Var21", "Var31", "Var32", "Var41", "Var51", "Var52"};
  const auto z = standard_normal_draws(panel.n_people(), spec, 0);
  const auto sll = xlm_simulated_loglik(b, Eigen::VectorXd::Zero(8), panel, cols, z, spec.n_draws);
  const auto clm = clm_loglik(b, panel);
  CHECK(sll.value == clm.value);
  CHECK((sll.gradient.head(9) - clm.gradient).cwiseAbs().maxCoeff() < 1e-10);

  // R = 1 with the draw forced to zero.
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(panel.n_people(), 8);
  const auto one = xlm_simulated_loglik(b, Eigen::VectorXd::Constant(8, 0.7), panel, cols, zero, 1);
  CHECK(one.value == clm.value);

  CHECK_THROWS_AS(xlm_simulated_loglik(b, Eigen::VectorXd::Constant(8, -0.1), data, spec, 1), DomainError);
  CHECK_THROWS_AS(xlm_simulated_loglik(b, Eigen::VectorXd::Zero(7), panel, cols, z, spec.n_draws), DomainError);
  CHECK_THROWS_AS(xlm_simulated_loglik(b, Eigen::VectorXd::Zero(8), panel, cols, z, 7), DomainError);
}

TEST_CASE("two respondents, two draws: explicit double sum") {
  ChoiceDataLong d;
  d.column_names = {"x1", "x2"};
  // Respondent 1: two sets, respondent 2: one set; three alternatives each.
  d.personid = {1, 1, 1, 1, 1, 1, 2, 2, 2};
  d.cs = {1, 1, 1, 2, 2, 2, 3, 3, 3};
  d.alt = {1, 2, 3, 1, 2, 3, 1, 2, 3};
  d.choice = {1, 0, 0, 0, 0, 1, 0, 1, 0};
  d.X.resize(9, 2);
  d.X << 1, 0, 0, 1, -1, -1, 0, 1, 1, 0, 0, 0, 0.5, -1, -0.5, 1, 0, 0;
  const PanelData panel(d);
  Eigen::VectorXd b(2), sigma(1);
  b << 0.4, -0.3;
  sigma << 0.9;
  Eigen::MatrixXd z(4, 1);
  z << -1.2, 0.5, 0.3, 2.0;
  const auto sll = xlm_simulated_loglik(b, sigma, panel, {0}, z, 2);

  auto chosen_prob = [&](int first, int chosen, double b1) {
    Eigen::VectorXd beta(2);
    beta << b1, b(1);
    return oracle::mnl_probabilities(d.X.middleRows(first, 3), beta)[chosen];
  };
  long double expected = 0;
  // Respondent 1 uses z rows 0..1, respondent 2 rows 2..3.
  long double p1 = 0, p2 = 0;
  for (int r = 0; r < 2; ++r) {
    const double b1 = b(0) + sigma(0) * z(r, 0);
    p1 += chosen_prob(0, 0, b1) * chosen_prob(3, 2, b1);
    const double b2 = b(0) + sigma(0) * z(2 + r, 0);
    p2 += chosen_prob(6, 1, b2);
  }
  expected = std::log(p1 / 2) + std::log(p2 / 2);
  CHECK(sll.value == doctest::Approx(static_cast<double>(expected)).epsilon(1e-13));
}

TEST_CASE("simulated score matches finite differences with fixed draws") {
  const auto data = small_panel(2, 25);
  const PanelData panel(data);
  const std::vector<int> cols{1, 3, 6, 7};
  RandomCoefSpec spec;
  spec.names = {"Var11", "Var21", "Var41", "Var51"};
  spec.n_draws = 30;
  const auto z = standard_normal_draws(panel.n_people(), spec, 0);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 0.6);
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd theta(13);
    for (int i = 0; i < 13; ++i) theta(i) = n(rng);  // sigma may be negative
    auto f = [&](const Eigen::VectorXd& x) {
      return xlm_simulated_loglik(x.head(9), x.tail(4), panel, cols, z, spec.n_draws).value;
    };
    const auto g = xlm_simulated_loglik(theta.head(9), theta.tail(4), panel, cols, z, spec.n_draws).gradient;
    for (int i = 0; i < 13; ++i) {
      Eigen::VectorXd up = theta, down = theta;
      up(i) += 1e-5;
      down(i) -= 1e-5;
      const double fd = (f(up) - f(down)) / 2e-5;
      CHECK(std::abs(g(i) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("threads do not change the simulated log-likelihood") {
  const auto data = small_panel(3, 30);
  const PanelData panel(data);
  RandomCoefSpec spec;
  spec.names = {"Var11", "Var41"};
  const auto z = standard_normal_draws(panel.n_people(), spec, 0);
  const Eigen::VectorXd b = test::table_coefficients();
  const Eigen::Vector2d sigma(0.5, 1.0);
  const auto one = xlm_simulated_loglik(b, sigma, panel, {1, 6}, z, spec.n_draws, 1);
  const auto four = xlm_simulated_loglik(b, sigma, panel, {1, 6}, z, spec.n_draws, 4);
  CHECK(one.value == four.value);
  CHECK(one.gradient == four.gradient);
}

TEST_CASE("non-finite simulated probability is a numeric error") {
  const auto data = small_panel(4, 3);
  const PanelData panel(data);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Constant(3, 1, 1.0);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(9);
  CHECK_THROWS_AS(xlm_simulated_loglik(b, Eigen::VectorXd::Constant(1, std::numeric_limits<double>::infinity()), panel, {1}, z, 1), NumericError);
}

TEST_CASE("fit_xlm converges when the spread sits near zero") {
  // This sample once left BFGS stalled at a 2.5e-6 gradient, burning its
  // whole iteration budget on line searches lost in rounding noise.
  const auto spec = test::worked_spec();
  PriorSpec prior;
  prior.mean = Eigen::VectorXd::Zero(9);
  prior.covariance = Eigen::MatrixXd::Identity(9, 9);
  const auto design = cea_optimize_with_draws(spec, draw_priors(prior, 1), 1).design;
  SimulationConfig cfg;
  cfg.true_means = test::table_coefficients();
  cfg.n_respondents = 500;
  cfg.seed = 1004;
  const auto stalled = merge_design(reshape_wide_to_long(simulate_responses(design, cfg), 3), design);
  RandomCoefSpec rc;
  rc.names = {"Var41"};
  const auto fit = fit_xlm(stalled, rc, 0);
  CHECK(fit.converged);
  CHECK(fit.iterations < 50);
  CHECK(fit.gradient_norm < 1e-6);
  CHECK(fit.sd(0) < 0.2);
}

TEST_CASE("fit_xlm") {
  const auto data = small_panel(5, 120);
  RandomCoefSpec spec;
  spec.names = {"Var11", "Var41"};
  spec.n_draws = 50;
  const auto fit = fit_xlm(data, spec, 9);
  CHECK(fit.kind == ModelKind::xlm);
  CHECK(fit.converged);
  CHECK(fit.gradient_norm < 1e-6);
  CHECK(fit.sd_names == spec.names);
  CHECK(fit.sd.size() == 2);
  CHECK((fit.sd.array() >= 0).all());
  CHECK(fit.loglik >= fit_clm(data).loglik - 1e-8);
  const auto again = fit_xlm(data, spec, 9);
  CHECK(again.coef == fit.coef);
  CHECK(again.sd == fit.sd);
  CHECK(again.loglik == fit.loglik);
  const auto text = report_fit(fit, test::worked_spec());
  CHECK(text.find("SD p-value") != std::string::npos);
  const auto back = fit_from_json(fit_to_json(fit));
  CHECK(back.sd == fit.sd);
  CHECK(back.sd_names == fit.sd_names);

  RandomCoefSpec bad = spec;
  bad.names = {"nope"};
  CHECK_THROWS_AS(fit_xlm(data, bad, 1), DomainError);
  bad.names = {"Var11", "Var11"};
  CHECK_THROWS_AS(fit_xlm(data, bad, 1), DomainError);
  bad.names = {};
  CHECK_THROWS_AS(fit_xlm(data, bad, 1), DomainError);
}
