#pragma once

#include "dce/design.hpp"
#include "dce/pipeline.hpp"
#include "dce/rng.hpp"
#include "dce/simulate.hpp"
#include "fixtures.hpp"

namespace test {

// Fixed design for the worked spec: a random design drawn from a fixed stream.
inline dce::DesignMatrix fixed_worked_design(std::uint64_t seed = 21) {
  auto rng = dce::make_stream(seed, 0);
  for (;;) {
    auto d = dce::random_design(worked_spec(), rng);
    try {
      dce::d_error(d, Eigen::VectorXd::Zero(d.n_cols()));
      return d;
    } catch (const dce::SingularDesign&) {
    }
  }
}

// Respondents answer every set of `design` (no blocking), then reshape+merge.
inline dce::ChoiceDataLong simulate_long(const dce::DesignMatrix& design, const Eigen::VectorXd& means,
                                         const Eigen::VectorXd& sds, int n_respondents, std::uint64_t seed) {
  dce::SimulationConfig cfg;
  cfg.true_means = means;
  cfg.true_sds = sds;
  cfg.n_respondents = n_respondents;
  cfg.seed = seed;
  const auto wide = dce::simulate_responses(design, cfg);
  return dce::merge_design(dce::reshape_wide_to_long(wide, design.n_alts), design);
}

}  // namespace test
