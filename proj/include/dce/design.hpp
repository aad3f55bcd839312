#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dce/coding.hpp"

namespace dce {

inline constexpr const char* kOptOutColumn = "no.choice.cte";

// Coded design, one row per (choice set, alternative), sets contiguous and
// alternatives in order. With an opt-out, column 0 is the opt-out constant
// and the opt-out is the last alternative of every set.
struct DesignMatrix {
  Eigen::MatrixXd X;
  std::vector<int> set_ids;
  std::vector<int> alt_ids;
  std::vector<std::string> column_names;
  bool no_choice = false;
  int n_alts = 0;

  int n_rows() const { return static_cast<int>(X.rows()); }
  int n_cols() const { return static_cast<int>(X.cols()); }
  int n_sets() const { return n_alts > 0 ? n_rows() / n_alts : 0; }
  // Rows of the i-th set in storage order (not its set id).
  auto set_rows(int i) const { return X.middleRows(i * n_alts, n_alts); }
  int set_id_at(int i) const { return set_ids[static_cast<size_t>(i) * n_alts]; }
  std::vector<int> distinct_set_ids() const;

  // Throws DomainError on any broken invariant.
  void validate() const;
};

// Builds a design from per-set profile lists (opt-out appended when the spec
// asks for one). Set ids start at `first_set_id`.
DesignMatrix make_design(const ExperimentSpec& spec, const std::vector<std::vector<Profile>>& sets,
                         int first_set_id = 1);

// Profiles of the non-opt-out rows, per set. Throws DecodeError on rows that
// do not decode under `spec`.
std::vector<std::vector<Profile>> design_profiles(const DesignMatrix& design, const ExperimentSpec& spec);

void write_design_csv(std::ostream& out, const DesignMatrix& design);
void write_design_csv(const std::filesystem::path& path, const DesignMatrix& design);
DesignMatrix read_design_csv(std::istream& in, const std::string& source = "<design>");
DesignMatrix read_design_csv(const std::filesystem::path& path);

struct PriorSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  int n_draws = 500;

  void validate() const;
};

// JSON: {"mean": [...], "covariance": "identity" | number | [[...]], "n_draws": n}
PriorSpec parse_prior_spec(const std::string& json_text);
PriorSpec load_prior_spec(const std::filesystem::path& path);

// Multinomial-logit probabilities of the alternatives in one set.
Eigen::VectorXd choice_probabilities(const Eigen::Ref<const Eigen::MatrixXd>& rows,
                                     const Eigen::Ref<const Eigen::VectorXd>& beta);

// Information contributed by a single set: X'(diag(p) - pp')X.
Eigen::MatrixXd set_information(const Eigen::Ref<const Eigen::MatrixXd>& rows,
                                const Eigen::Ref<const Eigen::VectorXd>& beta);

Eigen::MatrixXd fisher_information(const DesignMatrix& design, const Eigen::Ref<const Eigen::VectorXd>& beta);

// det(I)^(-1/K). Throws SingularDesign when det(I) < 1e-12.
double d_error_from_information(const Eigen::Ref<const Eigen::MatrixXd>& information);
double d_error(const DesignMatrix& design, const Eigen::Ref<const Eigen::VectorXd>& beta);

// n_draws x K matrix of multivariate-normal coefficient draws.
Eigen::MatrixXd draw_priors(const PriorSpec& prior, std::uint64_t seed);

// Mean D-error over the rows of `draws`.
double db_error(const DesignMatrix& design, const Eigen::Ref<const Eigen::MatrixXd>& draws);

// Uniformly random design over the full factorial.
DesignMatrix random_design(const ExperimentSpec& spec, std::mt19937_64& rng);

struct CeaOptions {
  int max_sweeps = 50;
  int max_retries = 20;  // fresh random starts when the start is singular
  int n_restarts = 1;
  int threads = 1;
};

struct OptimizedDesign {
  DesignMatrix design;
  double d_error = 0.0;          // DB-error over the prior draws
  double initial_d_error = 0.0;  // same, for the random start
  int iterations = 0;            // full sweeps performed
  bool converged = false;        // last sweep made no improvement
  std::uint64_t seed = 0;
  int restart = 0;               // index of the winning restart
  std::vector<double> history;   // DB-error after each accepted exchange
};

// Coordinate exchange: sweep (set, alternative, attribute) coordinates, try
// every level and keep the one with the lowest DB-error, until a sweep
// yields no strict improvement or `max_sweeps` is reached.
OptimizedDesign cea_optimize(const ExperimentSpec& spec, const PriorSpec& prior, std::uint64_t seed,
                             const CeaOptions& options = {});

// Same, with caller-supplied draws (n_draws x K).
OptimizedDesign cea_optimize_with_draws(const ExperimentSpec& spec, const Eigen::MatrixXd& draws,
                                        std::uint64_t seed, const CeaOptions& options = {});

// Contiguous split by choice set.
std::vector<DesignMatrix> block_design(const DesignMatrix& design, int n_blocks);

}  // namespace dce
