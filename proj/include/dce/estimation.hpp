#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dce/coding.hpp"
#include "dce/pipeline.hpp"

namespace dce {

// Name of the numeric price column produced by linearize_price.
inline constexpr const char* kLinearPriceColumn = "price";

// Choice data indexed for likelihood evaluation: choice sets (strata) and
// respondents (panels) as contiguous row ranges.
class PanelData {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit PanelData(const ChoiceDataLong& data);

  const RowMatrix& X() const { return X_; }
  const std::vector<std::string>& column_names() const { return names_; }
  int n_params() const { return static_cast<int>(X_.cols()); }
  int n_groups() const { return static_cast<int>(chosen_.size()); }
  int n_people() const { return static_cast<int>(person_start_.size()) - 1; }
  int group_begin(int g) const { return group_start_[g]; }
  int group_size(int g) const { return group_start_[g + 1] - group_start_[g]; }
  // Row offset of the chosen alternative inside group g.
  int chosen(int g) const { return chosen_[g]; }
  // Groups of respondent n are [person_begin(n), person_begin(n + 1)).
  int person_begin(int n) const { return person_start_[n]; }
  long person_id(int n) const { return person_ids_[n]; }

 private:
  RowMatrix X_;
  std::vector<std::string> names_;
  std::vector<int> group_start_;
  std::vector<int> chosen_;
  std::vector<int> person_start_;
  std::vector<long> person_ids_;
};

struct LogLikelihood {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

// Conditional-logit log-likelihood with analytic gradient and Hessian.
// Sums per respondent, then over respondents in data order.
LogLikelihood clm_loglik(const Eigen::Ref<const Eigen::VectorXd>& beta, const PanelData& data);
LogLikelihood clm_loglik(const Eigen::Ref<const Eigen::VectorXd>& beta, const ChoiceDataLong& data);

enum class ModelKind { clm, xlm };

struct ModelFit {
  ModelKind kind = ModelKind::clm;
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::VectorXd se;
  Eigen::VectorXd p_value;
  // Random-coefficient spreads (XLM only), reported as |sigma|.
  std::vector<std::string> sd_names;
  Eigen::VectorXd sd;
  Eigen::VectorXd sd_se;
  Eigen::VectorXd sd_p_value;
  double loglik = 0.0;
  double null_loglik = 0.0;  // at beta = 0
  double gradient_norm = 0.0;  // sup-norm at the reported optimum
  int n_obs = 0;  // choice sets
  int n_respondents = 0;
  int iterations = 0;
  bool converged = false;
  std::uint64_t seed = 0;
  int n_draws = 0;
  std::string draw_kind;
  std::vector<std::string> warnings;

  int index_of(const std::string& name) const;  // -1 when absent
  int sd_index_of(const std::string& name) const;
};

std::string fit_to_json(const ModelFit& fit);
ModelFit fit_from_json(const std::string& text);
void save_fit(const std::filesystem::path& path, const ModelFit& fit);
ModelFit load_fit(const std::filesystem::path& path);

struct ClmOptions {
  int max_iterations = 100;
  double tolerance = 1e-6;  // gradient sup-norm
};

// Newton-Raphson with step halving, started at beta = 0.
ModelFit fit_clm(const ChoiceDataLong& data, const ClmOptions& options = {});

// Two-sided p-value under the asymptotic normal approximation.
double normal_p_value(double estimate, double se);

// Replaces the price attribute's coded columns with one numeric column of
// the price amounts (0 for the opt-out). Needs `values` on the price
// attribute.
ChoiceDataLong linearize_price(const ChoiceDataLong& data, const ExperimentSpec& spec);

struct LevelCoefficient {
  std::string level;
  double coefficient = 0.0;
  std::optional<double> se;
  std::optional<double> p_value;
  std::optional<double> sd;
  std::optional<double> sd_se;
  std::optional<double> sd_p_value;
  bool omitted = false;
  // False for a dummy-coded reference level: its value is fixed, not recovered.
  bool applicable = true;
};

struct AttributeCoefficients {
  std::string attribute;
  std::vector<LevelCoefficient> levels;
  // Linear price: `levels` holds a single per-unit row.
  bool linear = false;
};

// Full per-level table. The effects-coded omitted level gets minus the sum
// of the attribute's estimated coefficients.
std::vector<AttributeCoefficients> recover_omitted(const ModelFit& fit, const ExperimentSpec& spec);

struct AttributeImportance {
  std::string attribute;
  double importance = 0.0;  // max level coefficient - min level coefficient
  int rank = 0;             // 1 = most important
};

// Ranked descending. Dummy reference levels count as 0; a linear price
// uses |beta| * (max amount - min amount).
std::vector<AttributeImportance> attribute_importance(const std::vector<AttributeCoefficients>& table,
                                                      const ExperimentSpec& spec);

struct WtpEntry {
  std::string attribute;
  std::string level;
  double value = 0.0;  // in price units
};

// -beta_level / beta_price. Throws WtpError when |beta_price| < 1e-8.
double wtp_ratio(double beta_level, double beta_price);

// WTP for every non-price level. Requires a fit with a linear price column;
// refuses categorical price with WtpError.
std::vector<WtpEntry> wtp(const ModelFit& fit, const ExperimentSpec& spec);

// Radical-inverse sequence of indices skip+1 .. skip+n.
std::vector<double> halton_sequence(int n, int base, int skip = 0);

// Inverse standard-normal CDF.
double normal_quantile(double u);

// First n primes.
std::vector<int> first_primes(int n);

enum class DrawKind { halton, pseudo };

struct RandomCoefSpec {
  std::vector<std::string> names;
  int n_draws = 100;
  DrawKind draw_kind = DrawKind::halton;
  int burn_in = 10;
};

std::string to_string(DrawKind kind);
DrawKind parse_draw_kind(const std::string& text);

// Standard-normal draws, (n_people * R) x n_random; respondent n's draws are
// rows [n*R, (n+1)*R). Halton uses prime bases in declaration order and
// consecutive points across respondents after the burn-in; pseudo draws
// come from a per-respondent stream of `seed`.
Eigen::MatrixXd standard_normal_draws(int n_people, const RandomCoefSpec& spec, std::uint64_t seed);

struct SimulatedLogLik {
  double value = 0.0;
  Eigen::VectorXd gradient;  // (b, sigma)
};

// Panel simulated log-likelihood over explicit draws. beta_r = b + sigma * z_r
// on the random columns. sigma may be negative here (the likelihood depends
// on its sign only through the draws).
SimulatedLogLik xlm_simulated_loglik(const Eigen::Ref<const Eigen::VectorXd>& b,
                                     const Eigen::Ref<const Eigen::VectorXd>& sigma, const PanelData& data,
                                     const std::vector<int>& random_columns, const Eigen::MatrixXd& draws,
                                     int n_draws, int threads = 1);

// Convenience form: draws generated from `spec` and `seed`; requires sigma >= 0.
SimulatedLogLik xlm_simulated_loglik(const Eigen::Ref<const Eigen::VectorXd>& b,
                                     const Eigen::Ref<const Eigen::VectorXd>& sigma, const ChoiceDataLong& data,
                                     const RandomCoefSpec& spec, std::uint64_t seed);

struct XlmOptions {
  int max_iterations = 500;
  double tolerance = 1e-6;
  double initial_sd = 0.1;
  int threads = 1;
};

// BFGS on the simulated log-likelihood, started from the CLM estimates.
ModelFit fit_xlm(const ChoiceDataLong& data, const RandomCoefSpec& spec, std::uint64_t seed,
                 const XlmOptions& options = {});

struct ReportRow {
  enum class Kind { level, constant, linear_price };
  Kind kind = Kind::level;
  std::string attribute;
  LevelCoefficient value;
};

std::vector<ReportRow> report_rows(const ModelFit& fit, const ExperimentSpec& spec);

// Table with attributes, levels, coefficient, SE and p-value (plus SD
// columns for XLM); p-values below 1e-4 print as "p<0.0001".
std::string report_fit(const ModelFit& fit, const ExperimentSpec& spec);
void write_report_csv(std::ostream& out, const ModelFit& fit, const ExperimentSpec& spec);
// attribute,level,coefficient rows for plotting.
void write_plot_data(std::ostream& out, const ModelFit& fit, const ExperimentSpec& spec);

std::string format_p_value(double p);

}  // namespace dce
