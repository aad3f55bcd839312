#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dce/coding.hpp"
#include "dce/design.hpp"

namespace test {

inline std::filesystem::path data_dir() { return DCE_TEST_DATA_DIR; }

// Five attributes with levels (3,2,3,2,3), effects coded, 16 sets of two
// profiles plus an opt-out, two blocks.
inline dce::ExperimentSpec worked_spec() {
  dce::ExperimentSpec spec;
  spec.attributes = {
      {"Efficacy", {"80%", "90%", "100%"}, dce::Coding::effects, false, "", {}},
      {"Side effects", {"Nausea", "None"}, dce::Coding::effects, false, "", {}},
      {"Dose", {"Once a day", "Once a week", "Once a month"}, dce::Coding::effects, false, "", {}},
      {"Administration", {"Oral", "Injection"}, dce::Coding::effects, false, "", {}},
      {"Price", {"100", "150", "200"}, dce::Coding::effects, true, "EUR", {100, 150, 200}},
  };
  spec.n_alts = 3;
  spec.n_sets = 16;
  spec.no_choice = true;
  spec.n_blocks = 2;
  return spec;
}

inline dce::ExperimentSpec spec_with_levels(const std::vector<int>& levels, int n_alts = 2, int n_sets = 4,
                                            bool no_choice = false) {
  dce::ExperimentSpec spec;
  for (size_t a = 0; a < levels.size(); ++a) {
    dce::AttributeSpec attr;
    attr.name = "A" + std::to_string(a + 1);
    for (int l = 1; l <= levels[a]; ++l) attr.levels.push_back("L" + std::to_string(l));
    spec.attributes.push_back(attr);
  }
  spec.n_alts = n_alts;
  spec.n_sets = n_sets;
  spec.no_choice = no_choice;
  return spec;
}

inline std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline dce::PriorSpec zero_prior(int k, int n_draws = 500) {
  dce::PriorSpec p;
  p.mean = Eigen::VectorXd::Zero(k);
  p.covariance = Eigen::MatrixXd::Identity(k, k);
  p.n_draws = n_draws;
  return p;
}

// Reference CLM coefficients for the worked spec, in design column order
// (opt-out constant first, fixed at -1).
inline Eigen::VectorXd table_coefficients() {
  Eigen::VectorXd b(9);
  b << -1.0, -1.61188, -0.75922, -0.42223, -2.32870, -0.61081, 2.02899, 0.83695, -0.33681;
  return b;
}

}  // namespace test
