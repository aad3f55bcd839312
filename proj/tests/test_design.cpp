#include <sstream>

#include "doctest.h"
#include "dce/design.hpp"
#include "dce/error.hpp"
#include "dce/rng.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dce;

namespace {

Eigen::MatrixXd rows(std::initializer_list<std::initializer_list<double>> values) {
  Eigen::MatrixXd m(values.size(), values.begin()->size());
  int r = 0;
  for (const auto& row : values) {
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

DesignMatrix worked_random_design(std::uint64_t seed) {
  auto rng = make_stream(seed, 77);
  return random_design(test::worked_spec(), rng);
}

// Two sets, two binary effects-coded attributes, two alternatives.
DesignMatrix toy_design() {
  const auto spec = test::spec_with_levels({2, 2}, 2, 2);
  return make_design(spec, {{Profile{{1, 1}}, Profile{{2, 2}}}, {Profile{{1, 2}}, Profile{{2, 1}}}});
}

}  // namespace

TEST_CASE("choice_probabilities closed forms") {
  const auto p = choice_probabilities(Eigen::MatrixXd::Random(3, 4), Eigen::VectorXd::Zero(4));
  for (int j = 0; j < 3; ++j) CHECK(p(j) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  const auto q = choice_probabilities(rows({{0.0}, {std::log(3.0)}}), Eigen::VectorXd::Ones(1));
  CHECK(q(0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(q(1) == doctest::Approx(0.75).epsilon(1e-14));

  // Large utilities stay finite thanks to max-subtraction.
  const auto big = choice_probabilities(rows({{800.0}, {799.0}}), Eigen::VectorXd::Ones(1));
  CHECK(big(0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));

  CHECK_THROWS_AS(choice_probabilities(rows({{1.0}}), Eigen::VectorXd::Ones(1)), DomainError);
  CHECK_THROWS_AS(choice_probabilities(rows({{1.0, 0.0}, {0.0, 1.0}}), Eigen::VectorXd::Ones(3)), DomainError);
  CHECK_THROWS_AS(choice_probabilities(rows({{NAN}, {0.0}}), Eigen::VectorXd::Ones(1)), NumericError);
}

TEST_CASE("choice_probabilities matches the extended-precision oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd X(3, 4);
    Eigen::VectorXd b(4);
    for (int i = 0; i < 12; ++i) X.data()[i] = u(rng);
    for (int i = 0; i < 4; ++i) b(i) = u(rng);
    const auto p = choice_probabilities(X, b);
    const auto ref = oracle::mnl_probabilities(X, b);
    for (int j = 0; j < 3; ++j) CHECK(std::fabs(p(j) - static_cast<double>(ref[j])) < 1e-14);
  }
}

TEST_CASE("fisher information equals minus the Hessian of the expected log-likelihood") {
  const auto d = toy_design();
  for (double scale : {0.0, 0.7}) {
    Eigen::VectorXd b0 = scale * Eigen::VectorXd::LinSpaced(d.n_cols(), -1, 1);
    // E_{b0}[LL(b)] = sum_s sum_j p_j(b0) log p_j(b); its Hessian at b0 is -I(b0).
    auto expected_ll = [&](const Eigen::VectorXd& b) {
      long double total = 0;
      for (int s = 0; s < d.n_sets(); ++s) {
        const Eigen::MatrixXd X = d.set_rows(s);
        const auto p0 = oracle::mnl_probabilities(X, b0);
        const auto p = oracle::mnl_probabilities(X, b);
        for (size_t j = 0; j < p.size(); ++j) total += p0[j] * std::log(p[j]);
      }
      return total;
    };
    const int k = d.n_cols();
    const long double h = 1e-4L;
    Eigen::MatrixXd fd(k, k);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        auto at = [&](double di, double dj) {
          Eigen::VectorXd b = b0;
          b(i) += di;
          b(j) += dj;
          return expected_ll(b);
        };
        fd(i, j) = static_cast<double>((at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h));
      }
    }
    const auto info = fisher_information(d, b0);
    CHECK((info + fd).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("fisher information is symmetric and PSD") {
  const auto d = worked_random_design(3);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  Eigen::VectorXd b(d.n_cols());
  for (int i = 0; i < b.size(); ++i) b(i) = n(rng);
  const auto info = fisher_information(d, b);
  CHECK((info - info.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd z(d.n_cols());
    for (int i = 0; i < z.size(); ++i) z(i) = n(rng);
    CHECK(z.dot(info * z) >= -1e-10);
  }
  CHECK_THROWS_AS(fisher_information(d, Eigen::VectorXd::Zero(3)), DomainError);
}

TEST_CASE("d_error on known information matrices") {
  CHECK(d_error_from_information(Eigen::MatrixXd::Identity(5, 5)) == doctest::Approx(1.0));
  Eigen::MatrixXd omega_inv = Eigen::MatrixXd::Zero(2, 2);
  omega_inv(0, 0) = 0.25;  // Omega = diag(4, 1)
  omega_inv(1, 1) = 1.0;
  CHECK(d_error_from_information(omega_inv) == doctest::Approx(2.0));
  CHECK_THROWS_AS(d_error_from_information(Eigen::MatrixXd::Zero(3, 3)), SingularDesign);
  Eigen::MatrixXd rank1 = Eigen::VectorXd::Ones(3) * Eigen::VectorXd::Ones(3).transpose();
  CHECK_THROWS_AS(d_error_from_information(rank1), SingularDesign);
}

TEST_CASE("d_error on the worked design matches independent determinants") {
  const auto d = worked_random_design(11);
  REQUIRE(d.n_rows() == 48);
  REQUIRE(d.n_cols() == 9);
  const auto info = fisher_information(d, Eigen::VectorXd::Zero(9));
  const long double det = oracle::determinant(info);
  std::vector<std::vector<long double>> a(9, std::vector<long double>(9));
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) a[i][j] = info(i, j);
  const long double det_cofactor = oracle::cofactor_determinant(a);
  CHECK(std::fabs(static_cast<double>((det - det_cofactor) / det)) < 1e-10);
  const double expected = std::pow(static_cast<double>(det), -1.0 / 9.0);
  CHECK(d_error(d, Eigen::VectorXd::Zero(9)) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("d_error scale law") {
  const auto info = fisher_information(worked_random_design(12), Eigen::VectorXd::Zero(9));
  const double base = d_error_from_information(info);
  for (double c : {0.5, 2.0, 10.0}) {
    CHECK(d_error_from_information(c * info) == doctest::Approx(base / c).epsilon(1e-12));
  }
}

TEST_CASE("draw_priors") {
  const auto prior = test::zero_prior(9);
  const auto draws = draw_priors(prior, 42);
  REQUIRE(draws.rows() == 500);
  REQUIRE(draws.cols() == 9);
  for (int j = 0; j < 9; ++j) CHECK(std::fabs(draws.col(j).mean()) <= 0.15);
  CHECK(draws == draw_priors(prior, 42));
  CHECK(draws != draw_priors(prior, 43));

  PriorSpec degenerate = prior;
  degenerate.mean = Eigen::VectorXd::Constant(9, 0.3);
  degenerate.covariance = Eigen::MatrixXd::Zero(9, 9);
  const auto same = draw_priors(degenerate, 1);
  CHECK((same.rowwise() - degenerate.mean.transpose()).cwiseAbs().maxCoeff() == 0.0);

  PriorSpec semidefinite = prior;
  semidefinite.covariance = Eigen::MatrixXd::Ones(9, 9);  // rank one
  const auto corr = draw_priors(semidefinite, 2);
  CHECK((corr.col(0) - corr.col(5)).cwiseAbs().maxCoeff() < 1e-8);

  PriorSpec indefinite = prior;
  indefinite.covariance(0, 0) = -1.0;
  CHECK_THROWS_AS(draw_priors(indefinite, 1), DomainError);
  PriorSpec wrong = prior;
  wrong.covariance = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(draw_priors(wrong, 1), DomainError);
}

TEST_CASE("db_error is the mean over draws") {
  const auto d = worked_random_design(13);
  Eigen::VectorXd b1 = Eigen::VectorXd::Constant(9, 0.2);
  Eigen::VectorXd b2 = Eigen::VectorXd::LinSpaced(9, -0.5, 0.5);
  Eigen::MatrixXd constant(4, 9);
  constant.rowwise() = b1.transpose();
  CHECK(db_error(d, constant) == doctest::Approx(d_error(d, b1)).epsilon(1e-14));
  Eigen::MatrixXd two(2, 9);
  two.row(0) = b1.transpose();
  two.row(1) = b2.transpose();
  CHECK(db_error(d, two) == doctest::Approx((d_error(d, b1) + d_error(d, b2)) / 2).epsilon(1e-14));

  // Loop-and-average oracle with oracle determinants.
  const auto draws = draw_priors(test::zero_prior(9), 7);
  long double sum = 0;
  for (int r = 0; r < draws.rows(); ++r) {
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(9, 9);
    for (int s = 0; s < d.n_sets(); ++s) {
      const Eigen::MatrixXd X = d.set_rows(s);
      const auto p = oracle::mnl_probabilities(X, draws.row(r).transpose());
      Eigen::VectorXd pv(3);
      for (int j = 0; j < 3; ++j) pv(j) = static_cast<double>(p[j]);
      Eigen::MatrixXd w = Eigen::MatrixXd(pv.asDiagonal()) - pv * pv.transpose();
      info += X.transpose() * w * X;
    }
    sum += std::pow(oracle::determinant(info), -1.0L / 9);
  }
  CHECK(db_error(d, draws) == doctest::Approx(static_cast<double>(sum / draws.rows())).epsilon(1e-10));
}

TEST_CASE("make_design and validation") {
  const auto d = worked_random_design(1);
  CHECK(d.n_rows() == 48);
  CHECK(d.column_names.front() == kOptOutColumn);
  for (int s = 0; s < d.n_sets(); ++s) {
    const auto set = d.set_rows(s);
    CHECK(set(2, 0) == 1.0);
    CHECK(set.row(2).tail(8).isZero());
    CHECK(set(0, 0) == 0.0);
    CHECK(d.alt_ids[s * 3 + 2] == 3);
  }
  CHECK_NOTHROW(d.validate());
  auto broken = d;
  broken.X(2, 1) = 1.0;
  CHECK_THROWS_AS(broken.validate(), DomainError);
  auto dup = d;
  dup.alt_ids[1] = 1;
  CHECK_THROWS_AS(dup.validate(), DomainError);
  const auto profiles = design_profiles(d, test::worked_spec());
  CHECK(profiles.size() == 16);
  CHECK(make_design(test::worked_spec(), profiles).X == d.X);
}

TEST_CASE("design CSV round trip") {
  const auto d = worked_random_design(2);
  std::ostringstream out;
  write_design_csv(out, d);
  CHECK(out.str().rfind("set,alt,no.choice.cte,Var11,Var12,Var21,Var31,Var32,Var41,Var51,Var52\n", 0) == 0);
  std::istringstream in(out.str());
  const auto back = read_design_csv(in);
  CHECK(back.X == d.X);
  CHECK(back.set_ids == d.set_ids);
  CHECK(back.alt_ids == d.alt_ids);
  CHECK(back.column_names == d.column_names);
  CHECK(back.no_choice);
  CHECK(back.n_alts == 3);
  std::istringstream bad("alt,set,x\n1,1,0\n");
  CHECK_THROWS_AS(read_design_csv(bad), FormatError);
}

TEST_CASE("prior spec parsing") {
  const auto p = load_prior_spec(test::data_dir() / "priors.json");
  CHECK(p.mean.size() == 9);
  CHECK(p.covariance == Eigen::MatrixXd::Identity(9, 9));
  CHECK(p.n_draws == 500);
  const auto scaled = parse_prior_spec(R"({"mean": [1, 2], "covariance": 0.5, "n_draws": 10})");
  CHECK(scaled.covariance(1, 1) == 0.5);
  CHECK(scaled.covariance(0, 1) == 0.0);
  const auto full = parse_prior_spec(R"({"mean": [0, 0], "covariance": [[1, 0.5], [0.5, 2]]})");
  CHECK(full.covariance(0, 1) == 0.5);
  CHECK_THROWS_AS(parse_prior_spec(R"({"mean": [0, 0], "covariance": "diag"})"), FormatError);
  CHECK_THROWS_AS(parse_prior_spec("not json"), FormatError);
  CHECK_THROWS_AS(load_prior_spec("/nonexistent/priors.json"), FormatError);
}

TEST_CASE("cea_optimize on the worked spec") {
  const auto spec = test::worked_spec();
  CeaOptions opts;
  const auto draws = draw_priors(test::zero_prior(9, 100), 5);
  const auto result = cea_optimize_with_draws(spec, draws, 5, opts);
  CHECK(result.design.n_rows() == 48);
  CHECK(result.design.n_cols() == 9);
  CHECK(result.d_error > 0);
  CHECK(std::isfinite(result.d_error));
  CHECK(result.d_error <= result.initial_d_error);
  CHECK(result.converged);
  CHECK(result.d_error == doctest::Approx(db_error(result.design, draws)).epsilon(1e-12));
  // Accepted exchanges never increase the criterion.
  double last = result.initial_d_error;
  for (double v : result.history) {
    CHECK(v <= last);
    last = v;
  }
  // Every regular row decodes to a profile of the full factorial.
  const auto all = enumerate_profiles(spec);
  for (const auto& set : design_profiles(result.design, spec)) {
    for (const auto& p : set) CHECK(std::binary_search(all.begin(), all.end(), p));
  }
  // Better than random designs drawn independently.
  auto rng = make_stream(99, 3);
  for (int i = 0; i < 20; ++i) {
    try {
      CHECK(result.d_error <= db_error(random_design(spec, rng), draws));
    } catch (const SingularDesign&) {
    }
  }
  const auto again = cea_optimize_with_draws(spec, draws, 5, opts);
  CHECK(again.design.X == result.design.X);
  CHECK(again.d_error == result.d_error);
}

TEST_CASE("cea restarts are independent of thread count") {
  const auto spec = test::worked_spec();
  const auto draws = draw_priors(test::zero_prior(9, 20), 8);
  CeaOptions one;
  one.n_restarts = 3;
  CeaOptions many = one;
  many.threads = 3;
  const auto a = cea_optimize_with_draws(spec, draws, 8, one);
  const auto b = cea_optimize_with_draws(spec, draws, 8, many);
  CHECK(a.design.X == b.design.X);
  CHECK(a.restart == b.restart);
  CHECK(a.d_error == b.d_error);
  CHECK_THROWS_AS(cea_optimize_with_draws(spec, Eigen::MatrixXd::Zero(5, 4), 1), DomainError);
}

TEST_CASE("cea surfaces singular starts") {
  // One set cannot identify four parameters.
  auto spec = test::spec_with_levels({3, 3}, 2, 1);
  const auto draws = draw_priors(test::zero_prior(4, 5), 1);
  CeaOptions opts;
  opts.max_retries = 3;
  CHECK_THROWS_AS(cea_optimize_with_draws(spec, draws, 1, opts), SingularDesign);
}

TEST_CASE("block_design") {
  const auto d = worked_random_design(4);
  const auto blocks = block_design(d, 2);
  REQUIRE(blocks.size() == 2);
  CHECK(blocks[0].n_rows() == 24);
  CHECK(blocks[1].n_rows() == 24);
  CHECK(blocks[0].distinct_set_ids() == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(blocks[1].set_id_at(0) == 9);
  Eigen::MatrixXd joined(48, 9);
  joined << blocks[0].X, blocks[1].X;
  CHECK(joined == d.X);
  CHECK(block_design(d, 1)[0].X == d.X);
  CHECK_THROWS_AS(block_design(d, 3), DomainError);
  CHECK_THROWS_AS(block_design(d, 0), DomainError);
}
