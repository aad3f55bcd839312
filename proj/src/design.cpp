#include "dce/design.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "dce/csv.hpp"
#include "dce/error.hpp"
#include "dce/rng.hpp"

namespace dce {

namespace {

constexpr double kSingularDet = 1e-12;
constexpr double kPsdTolerance = 1e-8;

}  // namespace

std::vector<int> DesignMatrix::distinct_set_ids() const {
  std::vector<int> ids;
  for (int i = 0; i < n_sets(); ++i) ids.push_back(set_id_at(i));
  return ids;
}

void DesignMatrix::validate() const {
  if (n_alts < 2) throw DomainError("design needs at least 2 alternatives per set");
  if (n_rows() == 0 || n_rows() % n_alts != 0) {
    throw DomainError(fmt::format("design has {} rows, not a multiple of {} alternatives", n_rows(), n_alts));
  }
  if (static_cast<int>(set_ids.size()) != n_rows() || static_cast<int>(alt_ids.size()) != n_rows()) {
    throw DomainError("design id vectors do not match the row count");
  }
  if (static_cast<int>(column_names.size()) != n_cols()) {
    throw DomainError("design column names do not match the column count");
  }
  std::set<std::pair<int, int>> seen;
  for (int r = 0; r < n_rows(); ++r) {
    const int set_index = r / n_alts;
    if (set_ids[r] != set_ids[static_cast<size_t>(set_index) * n_alts]) {
      throw DomainError(fmt::format("row {}: set id changes inside a set", r + 1));
    }
    if (alt_ids[r] != r % n_alts + 1) {
      throw DomainError(fmt::format("row {}: alternative id {} out of order", r + 1, alt_ids[r]));
    }
    if (!seen.emplace(set_ids[r], alt_ids[r]).second) {
      throw DomainError(fmt::format("duplicate (set, alt) pair ({}, {})", set_ids[r], alt_ids[r]));
    }
    if (no_choice) {
      const bool opt_out = alt_ids[r] == n_alts;
      if (opt_out) {
        if (X(r, 0) != 1.0 || (n_cols() > 1 && X.row(r).tail(n_cols() - 1).cwiseAbs().maxCoeff() != 0.0)) {
          throw DomainError(fmt::format("row {}: malformed opt-out row", r + 1));
        }
      } else if (X(r, 0) != 0.0) {
        throw DomainError(fmt::format("row {}: opt-out constant set on a regular alternative", r + 1));
      }
    }
  }
}

DesignMatrix make_design(const ExperimentSpec& spec, const std::vector<std::vector<Profile>>& sets,
                         int first_set_id) {
  const int n_profile_alts = spec.n_profile_alts();
  const int offset = spec.no_choice ? 1 : 0;
  DesignMatrix d;
  d.no_choice = spec.no_choice;
  d.n_alts = spec.n_alts;
  if (spec.no_choice) d.column_names.push_back(kOptOutColumn);
  for (auto& n : spec.attribute_column_names()) d.column_names.push_back(std::move(n));
  d.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sets.size()) * spec.n_alts, spec.design_width());
  int r = 0;
  for (size_t s = 0; s < sets.size(); ++s) {
    if (static_cast<int>(sets[s].size()) != n_profile_alts) {
      throw DomainError(fmt::format("set {} has {} profiles, expected {}", s + 1, sets[s].size(), n_profile_alts));
    }
    for (int j = 0; j < spec.n_alts; ++j, ++r) {
      d.set_ids.push_back(first_set_id + static_cast<int>(s));
      d.alt_ids.push_back(j + 1);
      if (j < n_profile_alts) {
        d.X.row(r).segment(offset, spec.attribute_width()) = encode_profile(sets[s][j], spec).transpose();
      } else {
        d.X(r, 0) = 1.0;
      }
    }
  }
  return d;
}

std::vector<std::vector<Profile>> design_profiles(const DesignMatrix& design, const ExperimentSpec& spec) {
  const int offset = design.no_choice ? 1 : 0;
  std::vector<std::vector<Profile>> out;
  for (int s = 0; s < design.n_sets(); ++s) {
    std::vector<Profile> set;
    for (int j = 0; j < design.n_alts; ++j) {
      if (design.no_choice && j == design.n_alts - 1) continue;
      const int r = s * design.n_alts + j;
      set.push_back(decode_row(design.X.row(r).segment(offset, spec.attribute_width()).transpose(), spec));
    }
    out.push_back(std::move(set));
  }
  return out;
}

void write_design_csv(std::ostream& out, const DesignMatrix& design) {
  std::vector<std::string> header{"set", "alt"};
  header.insert(header.end(), design.column_names.begin(), design.column_names.end());
  csv::write_row(out, header);
  for (int r = 0; r < design.n_rows(); ++r) {
    std::vector<std::string> row{std::to_string(design.set_ids[r]), std::to_string(design.alt_ids[r])};
    for (int c = 0; c < design.n_cols(); ++c) row.push_back(csv::format_number(design.X(r, c)));
    csv::write_row(out, row);
  }
}

void write_design_csv(const std::filesystem::path& path, const DesignMatrix& design) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write '{}'", path.string()));
  write_design_csv(out, design);
}

DesignMatrix read_design_csv(std::istream& in, const std::string& source) {
  const csv::Table t = csv::read(in, source);
  if (t.header.size() < 3 || t.header[0] != "set" || t.header[1] != "alt") {
    throw FormatError(fmt::format("{}: design header must start with set,alt", source));
  }
  DesignMatrix d;
  d.column_names.assign(t.header.begin() + 2, t.header.end());
  d.no_choice = d.column_names.front() == kOptOutColumn;
  d.X.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(d.column_names.size()));
  int max_alt = 0;
  for (size_t r = 0; r < t.rows.size(); ++r) {
    d.set_ids.push_back(static_cast<int>(csv::parse_int(t.rows[r][0], source, t.lines[r])));
    d.alt_ids.push_back(static_cast<int>(csv::parse_int(t.rows[r][1], source, t.lines[r])));
    max_alt = std::max(max_alt, d.alt_ids.back());
    for (size_t c = 0; c < d.column_names.size(); ++c) {
      d.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          csv::parse_double(t.rows[r][c + 2], source, t.lines[r]);
    }
  }
  d.n_alts = max_alt;
  try {
    d.validate();
  } catch (const DomainError& e) {
    throw FormatError(fmt::format("{}: {}", source, e.what()));
  }
  return d;
}

DesignMatrix read_design_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open design '{}'", path.string()));
  return read_design_csv(in, path.string());
}

void PriorSpec::validate() const {
  if (mean.size() == 0) throw DomainError("prior mean is empty");
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
    throw DomainError(fmt::format("prior covariance is {}x{}, mean has length {}", covariance.rows(),
                                  covariance.cols(), mean.size()));
  }
  if (n_draws < 1) throw DomainError("prior needs at least one draw");
}

PriorSpec parse_prior_spec(const std::string& json_text) {
  PriorSpec p;
  try {
    const auto doc = nlohmann::json::parse(json_text);
    const auto mean = doc.at("mean").get<std::vector<double>>();
    p.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    const auto k = p.mean.size();
    const auto& cov = doc.contains("covariance") ? doc.at("covariance") : nlohmann::json("identity");
    if (cov.is_string()) {
      if (cov.get<std::string>() != "identity") throw FormatError("covariance string must be \"identity\"");
      p.covariance = Eigen::MatrixXd::Identity(k, k);
    } else if (cov.is_number()) {
      p.covariance = cov.get<double>() * Eigen::MatrixXd::Identity(k, k);
    } else {
      const auto rows = cov.get<std::vector<std::vector<double>>>();
      p.covariance.resize(static_cast<Eigen::Index>(rows.size()),
                          rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
      for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw FormatError("ragged covariance matrix");
        for (size_t j = 0; j < rows[i].size(); ++j) p.covariance(i, j) = rows[i][j];
      }
    }
    p.n_draws = doc.value("n_draws", 500);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("prior spec: {}", e.what()));
  }
  p.validate();
  return p;
}

PriorSpec load_prior_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open prior spec '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_prior_spec(buf.str());
}

Eigen::VectorXd choice_probabilities(const Eigen::Ref<const Eigen::MatrixXd>& rows,
                                     const Eigen::Ref<const Eigen::VectorXd>& beta) {
  if (rows.rows() < 2) throw DomainError("a choice set needs at least 2 alternatives");
  if (rows.cols() != beta.size()) {
    throw DomainError(fmt::format("beta has length {}, rows have {} columns", beta.size(), rows.cols()));
  }
  Eigen::VectorXd v = rows * beta;
  if (!v.allFinite()) throw NumericError("non-finite utility in choice set");
  v.array() = (v.array() - v.maxCoeff()).exp();
  return v / v.sum();
}

Eigen::MatrixXd set_information(const Eigen::Ref<const Eigen::MatrixXd>& rows,
                                const Eigen::Ref<const Eigen::VectorXd>& beta) {
  const Eigen::VectorXd p = choice_probabilities(rows, beta);
  const Eigen::RowVectorXd xbar = p.transpose() * rows;
  const Eigen::MatrixXd centered = rows.rowwise() - xbar;
  return centered.transpose() * p.asDiagonal() * centered;
}

Eigen::MatrixXd fisher_information(const DesignMatrix& design, const Eigen::Ref<const Eigen::VectorXd>& beta) {
  if (beta.size() != design.n_cols()) {
    throw DomainError(fmt::format("beta has length {}, design has {} columns", beta.size(), design.n_cols()));
  }
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(design.n_cols(), design.n_cols());
  for (int s = 0; s < design.n_sets(); ++s) info += set_information(design.set_rows(s), beta);
  return info;
}

double d_error_from_information(const Eigen::Ref<const Eigen::MatrixXd>& information) {
  const double det = Eigen::PartialPivLU<Eigen::MatrixXd>(information).determinant();
  if (!(det >= kSingularDet)) {
    throw SingularDesign(fmt::format("information matrix is singular (det = {:.3g})", det));
  }
  return std::pow(det, -1.0 / static_cast<double>(information.rows()));
}

double d_error(const DesignMatrix& design, const Eigen::Ref<const Eigen::VectorXd>& beta) {
  return d_error_from_information(fisher_information(design, beta));
}

Eigen::MatrixXd draw_priors(const PriorSpec& prior, std::uint64_t seed) {
  prior.validate();
  const Eigen::MatrixXd& cov = prior.covariance;
  const auto k = prior.mean.size();
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > kPsdTolerance) {
    throw DomainError("prior covariance is not symmetric");
  }
  Eigen::MatrixXd factor;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  // A semi-definite matrix can pass LLT with a pivot that is pure rounding
  // noise; such factors go to the eigen route too.
  const double scale = std::sqrt(std::max(cov.diagonal().maxCoeff(), 0.0));
  const bool well_conditioned =
      llt.info() == Eigen::Success && Eigen::MatrixXd(llt.matrixL()).diagonal().minCoeff() > 1e-6 * scale;
  if (well_conditioned) {
    factor = llt.matrixL();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.eigenvalues().minCoeff() < -kPsdTolerance) {
      throw DomainError(fmt::format("prior covariance is not positive semi-definite (min eigenvalue {:.3g})",
                                    eig.eigenvalues().minCoeff()));
    }
    // Eigenvalues within the tolerance of zero are rounding noise.
    const Eigen::VectorXd values =
        (eig.eigenvalues().array() > kPsdTolerance * std::max(1.0, eig.eigenvalues().maxCoeff()))
            .select(eig.eigenvalues(), 0.0);
    factor = eig.eigenvectors() * values.cwiseSqrt().asDiagonal();
  }
  std::mt19937_64 rng = make_stream(seed, 0);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd draws(prior.n_draws, k);
  Eigen::VectorXd z(k);
  for (int r = 0; r < prior.n_draws; ++r) {
    for (Eigen::Index j = 0; j < k; ++j) z(j) = normal(rng);
    draws.row(r) = (prior.mean + factor * z).transpose();
  }
  return draws;
}

double db_error(const DesignMatrix& design, const Eigen::Ref<const Eigen::MatrixXd>& draws) {
  if (draws.rows() == 0) throw DomainError("no prior draws");
  double sum = 0.0;
  for (Eigen::Index r = 0; r < draws.rows(); ++r) sum += d_error(design, draws.row(r).transpose());
  return sum / static_cast<double>(draws.rows());
}

namespace {

std::vector<std::vector<Profile>> random_sets(const ExperimentSpec& spec, std::mt19937_64& rng) {
  std::vector<std::vector<Profile>> sets(spec.n_sets);
  for (auto& set : sets) {
    for (int j = 0; j < spec.n_profile_alts(); ++j) {
      Profile p;
      for (const auto& attr : spec.attributes) {
        p.levels.push_back(std::uniform_int_distribution<int>(1, attr.n_levels())(rng));
      }
      set.push_back(std::move(p));
    }
  }
  return sets;
}

// Coordinate-exchange state for one restart. Keeps per-draw, per-set
// information so a single coordinate change only recomputes one set.
class ExchangeSearch {
 public:
  ExchangeSearch(const ExperimentSpec& spec, const Eigen::MatrixXd& draws)
      : spec_(spec), draws_(draws), k_(spec.design_width()) {}

  // Returns false if the start design is singular under some draw.
  bool reset(std::vector<std::vector<Profile>> sets) {
    sets_ = std::move(sets);
    design_ = make_design(spec_, sets_);
    const auto n_draws = draws_.rows();
    per_set_.assign(static_cast<size_t>(n_draws), std::vector<Eigen::MatrixXd>(spec_.n_sets));
    totals_.assign(static_cast<size_t>(n_draws), Eigen::MatrixXd::Zero(k_, k_));
    for (Eigen::Index r = 0; r < n_draws; ++r) {
      for (int s = 0; s < spec_.n_sets; ++s) {
        per_set_[r][s] = set_information(design_.set_rows(s), draws_.row(r).transpose());
      }
      recompute_total(r);
    }
    current_ = evaluate_totals();
    return std::isfinite(current_);
  }

  double current() const { return current_; }
  const DesignMatrix& design() const { return design_; }

  // One full sweep. Returns true if any coordinate improved.
  bool sweep(std::vector<double>& history) {
    bool improved = false;
    const int offset = spec_.no_choice ? 1 : 0;
    for (int s = 0; s < spec_.n_sets; ++s) {
      for (int j = 0; j < spec_.n_profile_alts(); ++j) {
        for (int a = 0; a < spec_.n_attributes(); ++a) {
          const auto& attr = spec_.attributes[a];
          const int incumbent = sets_[s][j].levels[a];
          const int row = s * spec_.n_alts + j;
          const int col = offset + spec_.attribute_offset(a);
          Eigen::MatrixXd rows = design_.set_rows(s);
          int best_level = incumbent;
          double best = current_;
          for (int level = 1; level <= attr.n_levels(); ++level) {
            if (level == incumbent) continue;
            rows.row(j).segment(col, attr.coded_width()) =
                encode_level(level, attr.n_levels(), attr.coding).transpose();
            const double value = evaluate_candidate(s, rows);
            if (value < best) {
              best = value;
              best_level = level;
            }
          }
          if (best_level != incumbent) {
            sets_[s][j].levels[a] = best_level;
            design_.X.row(row).segment(col, attr.coded_width()) =
                encode_level(best_level, attr.n_levels(), attr.coding).transpose();
            for (Eigen::Index r = 0; r < draws_.rows(); ++r) {
              per_set_[r][s] = set_information(design_.set_rows(s), draws_.row(r).transpose());
              recompute_total(r);
            }
            current_ = evaluate_totals();
            history.push_back(current_);
            improved = true;
          }
        }
      }
    }
    return improved;
  }

 private:
  void recompute_total(Eigen::Index r) {
    totals_[r].setZero();
    for (int s = 0; s < spec_.n_sets; ++s) totals_[r] += per_set_[r][s];
  }

  static double d_error_or_inf(const Eigen::MatrixXd& info) {
    const double det = Eigen::PartialPivLU<Eigen::MatrixXd>(info).determinant();
    if (!(det >= kSingularDet)) return std::numeric_limits<double>::infinity();
    return std::pow(det, -1.0 / static_cast<double>(info.rows()));
  }

  double evaluate_totals() const {
    double sum = 0.0;
    for (const auto& t : totals_) sum += d_error_or_inf(t);
    return sum / static_cast<double>(totals_.size());
  }

  double evaluate_candidate(int s, const Eigen::MatrixXd& rows) const {
    double sum = 0.0;
    Eigen::MatrixXd total(k_, k_);
    for (Eigen::Index r = 0; r < draws_.rows(); ++r) {
      total = totals_[r] - per_set_[r][s] + set_information(rows, draws_.row(r).transpose());
      sum += d_error_or_inf(total);
      if (!std::isfinite(sum)) return sum;
    }
    return sum / static_cast<double>(draws_.rows());
  }

  const ExperimentSpec& spec_;
  const Eigen::MatrixXd& draws_;
  int k_;
  std::vector<std::vector<Profile>> sets_;
  DesignMatrix design_;
  std::vector<std::vector<Eigen::MatrixXd>> per_set_;
  std::vector<Eigen::MatrixXd> totals_;
  double current_ = 0.0;
};

OptimizedDesign run_restart(const ExperimentSpec& spec, const Eigen::MatrixXd& draws, std::uint64_t seed,
                            int restart, const CeaOptions& options) {
  std::mt19937_64 rng = make_stream(seed, 1000 + static_cast<std::uint64_t>(restart));
  ExchangeSearch search(spec, draws);
  bool ok = false;
  for (int attempt = 0; attempt <= options.max_retries && !ok; ++attempt) {
    ok = search.reset(random_sets(spec, rng));
  }
  if (!ok) {
    throw SingularDesign(fmt::format("no non-singular random start found after {} retries", options.max_retries));
  }
  OptimizedDesign out;
  out.seed = seed;
  out.restart = restart;
  out.initial_d_error = search.current();
  while (out.iterations < options.max_sweeps) {
    ++out.iterations;
    if (!search.sweep(out.history)) {
      out.converged = true;
      break;
    }
  }
  out.design = search.design();
  out.d_error = db_error(out.design, draws);
  return out;
}

}  // namespace

DesignMatrix random_design(const ExperimentSpec& spec, std::mt19937_64& rng) {
  return make_design(spec, random_sets(spec, rng));
}

OptimizedDesign cea_optimize_with_draws(const ExperimentSpec& spec, const Eigen::MatrixXd& draws,
                                        std::uint64_t seed, const CeaOptions& options) {
  spec.validate();
  if (draws.cols() != spec.design_width()) {
    throw DomainError(fmt::format("prior has {} coefficients, design needs {}", draws.cols(), spec.design_width()));
  }
  if (options.n_restarts < 1) throw DomainError("n_restarts must be positive");
  const int threads = std::max(1, options.threads);

  std::vector<OptimizedDesign> results(static_cast<size_t>(options.n_restarts));
  for (int begin = 0; begin < options.n_restarts; begin += threads) {
    const int end = std::min(options.n_restarts, begin + threads);
    std::vector<std::future<OptimizedDesign>> pending;
    for (int r = begin; r < end; ++r) {
      pending.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred, run_restart,
                                   std::cref(spec), std::cref(draws), seed, r, std::cref(options)));
    }
    for (int r = begin; r < end; ++r) results[r] = pending[r - begin].get();
  }
  size_t best = 0;
  for (size_t r = 1; r < results.size(); ++r) {
    if (results[r].d_error < results[best].d_error) best = r;
  }
  return results[best];
}

OptimizedDesign cea_optimize(const ExperimentSpec& spec, const PriorSpec& prior, std::uint64_t seed,
                             const CeaOptions& options) {
  return cea_optimize_with_draws(spec, draw_priors(prior, seed), seed, options);
}

std::vector<DesignMatrix> block_design(const DesignMatrix& design, int n_blocks) {
  if (n_blocks < 1) throw DomainError("n_blocks must be positive");
  const int n_sets = design.n_sets();
  if (n_sets % n_blocks != 0) {
    throw DomainError(fmt::format("{} choice sets cannot be split into {} equal blocks", n_sets, n_blocks));
  }
  const int per_block = n_sets / n_blocks;
  const int rows = per_block * design.n_alts;
  std::vector<DesignMatrix> blocks;
  for (int b = 0; b < n_blocks; ++b) {
    DesignMatrix part;
    part.no_choice = design.no_choice;
    part.n_alts = design.n_alts;
    part.column_names = design.column_names;
    part.X = design.X.middleRows(b * rows, rows);
    part.set_ids.assign(design.set_ids.begin() + b * rows, design.set_ids.begin() + (b + 1) * rows);
    part.alt_ids.assign(design.alt_ids.begin() + b * rows, design.alt_ids.begin() + (b + 1) * rows);
    blocks.push_back(std::move(part));
  }
  return blocks;
}

}  // namespace dce
