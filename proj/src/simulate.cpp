#include "dce/simulate.hpp"

#include <fmt/format.h>

#include "dce/error.hpp"
#include "dce/rng.hpp"

namespace dce {

WideResponses simulate_responses(const DesignMatrix& design, const SimulationConfig& config) {
  const auto k = design.n_cols();
  if (config.true_means.size() != k) {
    throw DomainError(fmt::format("true means have length {}, design has {} columns", config.true_means.size(), k));
  }
  Eigen::VectorXd sds = config.true_sds.size() == 0 ? Eigen::VectorXd::Zero(k) : config.true_sds;
  if (sds.size() != k) throw DomainError(fmt::format("true sds have length {}, design has {} columns", sds.size(), k));
  if ((sds.array() < 0.0).any()) throw DomainError("true sds must be non-negative");
  if (config.n_respondents < 0) throw DomainError("n_respondents must be non-negative");
  if (design.n_alts > 26) throw DomainError("at most 26 alternatives can be lettered");

  WideResponses wide;
  wide.set_ids = design.distinct_set_ids();
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  for (int i = 0; i < config.n_respondents; ++i) {
    const long personid = config.first_personid + i;
    auto rng = make_stream(config.seed, static_cast<std::uint64_t>(personid));
    Eigen::VectorXd beta = config.true_means;
    for (Eigen::Index j = 0; j < k; ++j) beta(j) += sds(j) * normal(rng);
    WideResponses::Row row;
    row.personid = personid;
    row.block = config.block;
    for (int s = 0; s < design.n_sets(); ++s) {
      const Eigen::VectorXd p = choice_probabilities(design.set_rows(s), beta);
      const double u = uniform(rng);
      int chosen = design.n_alts - 1;
      double cumulative = 0.0;
      for (int j = 0; j < design.n_alts; ++j) {
        cumulative += p(j);
        if (u < cumulative) {
          chosen = j;
          break;
        }
      }
      row.choices.emplace_back(1, static_cast<char>('A' + chosen));
    }
    wide.rows.push_back(std::move(row));
  }
  return wide;
}

}  // namespace dce
