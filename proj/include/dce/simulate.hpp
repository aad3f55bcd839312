#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "dce/design.hpp"
#include "dce/pipeline.hpp"

namespace dce {

struct SimulationConfig {
  Eigen::VectorXd true_means;
  Eigen::VectorXd true_sds;  // zero for homogeneous preferences
  int n_respondents = 0;
  std::uint64_t seed = 0;
  long first_personid = 1;
  int block = 1;
};

// Synthetic respondents choosing among the design's alternatives under
// logit probabilities. Respondent n draws beta_n = means + sds * z_n and
// samples each set by inverse CDF, all from a stream keyed by
// (seed, personid).
WideResponses simulate_responses(const DesignMatrix& design, const SimulationConfig& config);

}  // namespace dce
