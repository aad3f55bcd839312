#include "dce/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "dce/design.hpp"
#include "dce/error.hpp"
#include "logit_kernel.hpp"

namespace dce {

PanelData::PanelData(const ChoiceDataLong& data) : X_(data.X), names_(data.column_names) {
  data.validate();
  const int n = data.n_rows();
  std::set<long> finished_people;
  for (int start = 0; start < n;) {
    int end = start;
    int chosen = -1;
    while (end < n && data.personid[end] == data.personid[start] && data.cs[end] == data.cs[start]) {
      if (data.choice[end] == 1) chosen = end - start;
      ++end;
    }
    const bool new_person = person_ids_.empty() || person_ids_.back() != data.personid[start];
    if (new_person) {
      if (!person_ids_.empty()) finished_people.insert(person_ids_.back());
      if (finished_people.count(data.personid[start])) {
        throw DataError(fmt::format("rows of personid {} are not contiguous", data.personid[start]));
      }
      person_ids_.push_back(data.personid[start]);
      person_start_.push_back(static_cast<int>(chosen_.size()));
    }
    group_start_.push_back(start);
    chosen_.push_back(chosen);
    start = end;
  }
  group_start_.push_back(n);
  person_start_.push_back(static_cast<int>(chosen_.size()));
}

LogLikelihood clm_loglik(const Eigen::Ref<const Eigen::VectorXd>& beta, const PanelData& data) {
  const int k = data.n_params();
  if (beta.size() != k) throw DomainError(fmt::format("beta has length {}, data has {} columns", beta.size(), k));
  LogLikelihood out;
  out.gradient = Eigen::VectorXd::Zero(k);
  out.hessian = Eigen::MatrixXd::Zero(k, k);
  std::vector<double> prob;
  Eigen::VectorXd xbar(k);
  for (int n = 0; n < data.n_people(); ++n) {
    double person_ll = 0.0;
    for (int g = data.person_begin(n); g < data.person_begin(n + 1); ++g) {
      const int begin = data.group_begin(g);
      const int size = data.group_size(g);
      person_ll += detail::group_log_prob(data.X(), begin, size, data.chosen(g), beta.data(), prob);
      xbar.setZero();
      for (int j = 0; j < size; ++j) xbar += prob[j] * data.X().row(begin + j).transpose();
      out.gradient += data.X().row(begin + data.chosen(g)).transpose() - xbar;
      for (int j = 0; j < size; ++j) {
        const Eigen::VectorXd d = data.X().row(begin + j).transpose() - xbar;
        out.hessian.noalias() -= prob[j] * d * d.transpose();
      }
    }
    out.value += person_ll;
  }
  return out;
}

LogLikelihood clm_loglik(const Eigen::Ref<const Eigen::VectorXd>& beta, const ChoiceDataLong& data) {
  return clm_loglik(beta, PanelData(data));
}

int ModelFit::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

int ModelFit::sd_index_of(const std::string& name) const {
  const auto it = std::find(sd_names.begin(), sd_names.end(), name);
  return it == sd_names.end() ? -1 : static_cast<int>(it - sd_names.begin());
}

namespace {

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i))) {
      arr.push_back(v(i));
    } else {
      arr.push_back(nullptr);
    }
  }
  return arr;
}

Eigen::VectorXd vec_from_json(const nlohmann::json& arr) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (size_t i = 0; i < arr.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = arr[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : arr[i].get<double>();
  }
  return v;
}

}  // namespace

std::string fit_to_json(const ModelFit& fit) {
  nlohmann::ordered_json doc;
  doc["model"] = fit.kind == ModelKind::clm ? "clm" : "xlm";
  doc["names"] = fit.names;
  doc["coef"] = vec_to_json(fit.coef);
  doc["se"] = vec_to_json(fit.se);
  doc["p_value"] = vec_to_json(fit.p_value);
  if (fit.kind == ModelKind::xlm) {
    doc["sd_names"] = fit.sd_names;
    doc["sd"] = vec_to_json(fit.sd);
    doc["sd_se"] = vec_to_json(fit.sd_se);
    doc["sd_p_value"] = vec_to_json(fit.sd_p_value);
    doc["seed"] = fit.seed;
    doc["n_draws"] = fit.n_draws;
    doc["draw_kind"] = fit.draw_kind;
  }
  doc["loglik"] = fit.loglik;
  doc["null_loglik"] = fit.null_loglik;
  doc["gradient_norm"] = fit.gradient_norm;
  doc["n_obs"] = fit.n_obs;
  doc["n_respondents"] = fit.n_respondents;
  doc["iterations"] = fit.iterations;
  doc["converged"] = fit.converged;
  doc["warnings"] = fit.warnings;
  return doc.dump(2) + "\n";
}

ModelFit fit_from_json(const std::string& text) {
  ModelFit fit;
  try {
    const auto doc = nlohmann::json::parse(text);
    const auto model = doc.at("model").get<std::string>();
    if (model != "clm" && model != "xlm") throw FormatError(fmt::format("unknown model kind '{}'", model));
    fit.kind = model == "clm" ? ModelKind::clm : ModelKind::xlm;
    fit.names = doc.at("names").get<std::vector<std::string>>();
    fit.coef = vec_from_json(doc.at("coef"));
    fit.se = vec_from_json(doc.at("se"));
    fit.p_value = vec_from_json(doc.at("p_value"));
    if (fit.kind == ModelKind::xlm) {
      fit.sd_names = doc.at("sd_names").get<std::vector<std::string>>();
      fit.sd = vec_from_json(doc.at("sd"));
      fit.sd_se = vec_from_json(doc.at("sd_se"));
      fit.sd_p_value = vec_from_json(doc.at("sd_p_value"));
      fit.seed = doc.value("seed", std::uint64_t{0});
      fit.n_draws = doc.value("n_draws", 0);
      fit.draw_kind = doc.value("draw_kind", std::string());
    }
    fit.loglik = doc.at("loglik").get<double>();
    fit.null_loglik = doc.value("null_loglik", 0.0);
    fit.gradient_norm = doc.value("gradient_norm", 0.0);
    fit.n_obs = doc.value("n_obs", 0);
    fit.n_respondents = doc.value("n_respondents", 0);
    fit.iterations = doc.value("iterations", 0);
    fit.converged = doc.value("converged", false);
    fit.warnings = doc.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("fit file: {}", e.what()));
  }
  const auto k = static_cast<Eigen::Index>(fit.names.size());
  if (fit.coef.size() != k || fit.se.size() != k || fit.p_value.size() != k) {
    throw FormatError("fit file: coefficient vectors do not match names");
  }
  return fit;
}

void save_fit(const std::filesystem::path& path, const ModelFit& fit) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write '{}'", path.string()));
  out << fit_to_json(fit);
}

ModelFit load_fit(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open fit '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return fit_from_json(buf.str());
}

double normal_p_value(double estimate, double se) {
  if (!(se > 0.0) || !std::isfinite(se)) return std::numeric_limits<double>::quiet_NaN();
  return std::erfc(std::abs(estimate / se) / std::sqrt(2.0));
}

namespace {

void check_identified(const PanelData& data) {
  for (int c = 0; c < data.n_params(); ++c) {
    bool varies = false;
    for (int g = 0; g < data.n_groups() && !varies; ++g) {
      const auto col = data.X().col(c).segment(data.group_begin(g), data.group_size(g));
      varies = col.maxCoeff() != col.minCoeff();
    }
    if (!varies) {
      throw EstimationError(fmt::format("column '{}' is constant within every choice set and cannot be identified",
                                        data.column_names()[c]));
    }
  }
}

constexpr double kSeparationBound = 25.0;
constexpr double kNewtonStepTolerance = 1e-4;

}  // namespace

ModelFit fit_clm(const ChoiceDataLong& data, const ClmOptions& options) {
  const PanelData panel(data);
  check_identified(panel);
  const int k = panel.n_params();

  ModelFit fit;
  fit.kind = ModelKind::clm;
  fit.names = panel.column_names();
  fit.n_obs = panel.n_groups();
  fit.n_respondents = panel.n_people();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  LogLikelihood ll = clm_loglik(beta, panel);
  fit.null_loglik = ll.value;
  bool separated = false;
  for (int it = 0; it < options.max_iterations; ++it) {
    const bool small_gradient = ll.gradient.lpNorm<Eigen::Infinity>() < options.tolerance;
    const Eigen::MatrixXd neg_h = -ll.hessian;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      if (beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
        separated = true;
        break;
      }
      throw EstimationError("Hessian is singular; the model is not identified by this data");
    }
    const Eigen::VectorXd step = ldlt.solve(ll.gradient);
    // Under separation the gradient vanishes while Newton steps stay O(1);
    // a flat gradient only counts as converged once the step is small too.
    if (small_gradient && step.lpNorm<Eigen::Infinity>() < kNewtonStepTolerance) {
      fit.converged = true;
      break;
    }
    double t = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      const Eigen::VectorXd candidate = beta + t * step;
      LogLikelihood next = clm_loglik(candidate, panel);
      if (std::isfinite(next.value) && next.value >= ll.value - 1e-12 * (1.0 + std::abs(ll.value))) {
        beta = candidate;
        ll = std::move(next);
        accepted = true;
        break;
      }
    }
    fit.iterations = it + 1;
    if (!accepted) break;
    if (beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
      separated = true;
      break;
    }
  }
  if (!fit.converged && ll.gradient.lpNorm<Eigen::Infinity>() < options.tolerance) fit.converged = true;

  fit.coef = beta;
  fit.loglik = ll.value;
  fit.gradient_norm = ll.gradient.lpNorm<Eigen::Infinity>();
  fit.se = Eigen::VectorXd::Constant(k, std::numeric_limits<double>::quiet_NaN());
  fit.p_value = fit.se;
  if (separated || beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
    for (int c = 0; c < k; ++c) {
      if (std::abs(beta(c)) > kSeparationBound) {
        fit.warnings.push_back(fmt::format("SeparationWarning: coefficient '{}' diverges ({:.3g})", fit.names[c], beta(c)));
      }
    }
  }
  const Eigen::MatrixXd neg_h = -ll.hessian;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(neg_h);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    if (fit.warnings.empty()) throw EstimationError("Hessian is singular at the optimum");
    return fit;
  }
  const Eigen::MatrixXd cov = lu.inverse();
  for (int c = 0; c < k; ++c) {
    if (cov(c, c) > 0.0) {
      fit.se(c) = std::sqrt(cov(c, c));
      fit.p_value(c) = normal_p_value(beta(c), fit.se(c));
    }
  }
  return fit;
}

ChoiceDataLong linearize_price(const ChoiceDataLong& data, const ExperimentSpec& spec) {
  const int pa = spec.price_attribute();
  if (pa < 0) throw DomainError("experiment has no price attribute");
  const auto& price = spec.attributes[pa];
  if (price.values.size() != price.levels.size()) {
    throw DomainError(fmt::format("price attribute '{}' needs numeric values for the linear refit", price.name));
  }
  const auto names = spec.attribute_column_names();
  std::vector<int> price_cols;
  for (int j = 0; j < price.coded_width(); ++j) {
    const auto& name = names[spec.attribute_offset(pa) + j];
    const auto it = std::find(data.column_names.begin(), data.column_names.end(), name);
    if (it == data.column_names.end()) throw DomainError(fmt::format("data lacks price column '{}'", name));
    price_cols.push_back(static_cast<int>(it - data.column_names.begin()));
  }
  const int opt_out = static_cast<int>(
      std::find(data.column_names.begin(), data.column_names.end(), kOptOutColumn) - data.column_names.begin());
  const bool has_opt_out = opt_out < static_cast<int>(data.column_names.size());

  ChoiceDataLong out = data;
  out.column_names.clear();
  const int first = price_cols.front();
  std::vector<int> keep;
  for (int c = 0; c < static_cast<int>(data.column_names.size()); ++c) {
    if (c == first) out.column_names.push_back(kLinearPriceColumn);
    if (std::find(price_cols.begin(), price_cols.end(), c) != price_cols.end()) continue;
    out.column_names.push_back(data.column_names[c]);
    keep.push_back(c);
  }
  out.X.resize(data.X.rows(), static_cast<Eigen::Index>(out.column_names.size()));
  Eigen::VectorXd block(price.coded_width());
  for (Eigen::Index r = 0; r < data.X.rows(); ++r) {
    double amount = 0.0;
    if (!(has_opt_out && data.X(r, opt_out) == 1.0)) {
      for (int j = 0; j < price.coded_width(); ++j) block(j) = data.X(r, price_cols[j]);
      const int level = decode_level(block, price.coding);
      if (level == 0) throw DecodeError(fmt::format("row {}: price columns match no level", r + 1));
      amount = price.values[level - 1];
    }
    Eigen::Index c_out = 0;
    for (int c = 0; c < static_cast<int>(data.column_names.size()); ++c) {
      if (c == first) out.X(r, c_out++) = amount;
      if (std::find(price_cols.begin(), price_cols.end(), c) != price_cols.end()) continue;
      out.X(r, c_out++) = data.X(r, c);
    }
  }
  return out;
}

namespace {

std::optional<double> finite_or_none(const Eigen::VectorXd& v, int i) {
  if (i < 0 || i >= v.size() || !std::isfinite(v(i))) return std::nullopt;
  return v(i);
}

LevelCoefficient estimated_level(const ModelFit& fit, const std::string& label, int idx, const std::string& col) {
  LevelCoefficient lc;
  lc.level = label;
  lc.coefficient = fit.coef(idx);
  lc.se = finite_or_none(fit.se, idx);
  lc.p_value = finite_or_none(fit.p_value, idx);
  const int sd_idx = fit.sd_index_of(col);
  if (sd_idx >= 0) {
    lc.sd = finite_or_none(fit.sd, sd_idx);
    lc.sd_se = finite_or_none(fit.sd_se, sd_idx);
    lc.sd_p_value = finite_or_none(fit.sd_p_value, sd_idx);
  }
  return lc;
}

}  // namespace

std::vector<AttributeCoefficients> recover_omitted(const ModelFit& fit, const ExperimentSpec& spec) {
  const auto names = spec.attribute_column_names();
  std::vector<AttributeCoefficients> table;
  for (int a = 0; a < spec.n_attributes(); ++a) {
    const auto& attr = spec.attributes[a];
    AttributeCoefficients entry;
    entry.attribute = attr.name;
    std::vector<int> idx;
    for (int j = 0; j < attr.coded_width(); ++j) idx.push_back(fit.index_of(names[spec.attribute_offset(a) + j]));
    const bool all_found = std::all_of(idx.begin(), idx.end(), [](int i) { return i >= 0; });
    const bool none_found = std::all_of(idx.begin(), idx.end(), [](int i) { return i < 0; });
    if (!all_found) {
      const int lin = fit.index_of(kLinearPriceColumn);
      if (attr.is_price && none_found && lin >= 0) {
        entry.linear = true;
        entry.levels.push_back(estimated_level(fit, "per " + (attr.unit.empty() ? std::string("unit") : attr.unit),
                                               lin, kLinearPriceColumn));
        table.push_back(std::move(entry));
        continue;
      }
      throw EstimationError(fmt::format("fit has no coefficients for attribute '{}'", attr.name));
    }
    const auto col = [&](int j) { return names[spec.attribute_offset(a) + j]; };
    if (attr.coding == Coding::effects) {
      double sum = 0.0;
      for (int j = 0; j < attr.coded_width(); ++j) {
        entry.levels.push_back(estimated_level(fit, attr.levels[j], idx[j], col(j)));
        sum += fit.coef(idx[j]);
      }
      LevelCoefficient omitted;
      omitted.level = attr.levels.back();
      omitted.coefficient = -sum;
      omitted.omitted = true;
      entry.levels.push_back(omitted);
    } else {
      LevelCoefficient reference;
      reference.level = attr.levels.front();
      reference.coefficient = std::numeric_limits<double>::quiet_NaN();
      reference.omitted = true;
      reference.applicable = false;
      entry.levels.push_back(reference);
      for (int j = 0; j < attr.coded_width(); ++j) {
        entry.levels.push_back(estimated_level(fit, attr.levels[j + 1], idx[j], col(j)));
      }
    }
    table.push_back(std::move(entry));
  }
  return table;
}

std::vector<AttributeImportance> attribute_importance(const std::vector<AttributeCoefficients>& table,
                                                      const ExperimentSpec& spec) {
  std::vector<AttributeImportance> out;
  for (const auto& entry : table) {
    AttributeImportance imp;
    imp.attribute = entry.attribute;
    if (entry.linear) {
      const auto it = std::find_if(spec.attributes.begin(), spec.attributes.end(),
                                   [&](const AttributeSpec& a) { return a.name == entry.attribute; });
      if (it == spec.attributes.end() || it->values.empty()) {
        throw DomainError(fmt::format("linear price '{}' needs level amounts for importance", entry.attribute));
      }
      const auto [lo, hi] = std::minmax_element(it->values.begin(), it->values.end());
      imp.importance = std::abs(entry.levels.front().coefficient) * (*hi - *lo);
    } else {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (const auto& level : entry.levels) {
        const double v = level.applicable ? level.coefficient : 0.0;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      imp.importance = hi - lo;
    }
    out.push_back(imp);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const AttributeImportance& a, const AttributeImportance& b) { return a.importance > b.importance; });
  for (size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i + 1);
  return out;
}

double wtp_ratio(double beta_level, double beta_price) {
  if (!(std::abs(beta_price) >= 1e-8)) {
    throw WtpError(fmt::format("price coefficient {:.3g} is too close to zero; WTP is undefined", beta_price));
  }
  return -beta_level / beta_price;
}

std::vector<WtpEntry> wtp(const ModelFit& fit, const ExperimentSpec& spec) {
  const int pa = spec.price_attribute();
  if (pa < 0) throw WtpError("the experiment has no price attribute");
  const int lin = fit.index_of(kLinearPriceColumn);
  if (lin < 0) {
    throw WtpError(fmt::format(
        "price attribute '{}' is categorical in this fit; a ratio over coded price levels has no per-unit "
        "meaning. Refit with a linear price column (fit-clm --linear-price) to compute WTP",
        spec.attributes[pa].name));
  }
  const double beta_price = fit.coef(lin);
  std::vector<WtpEntry> out;
  for (const auto& entry : recover_omitted(fit, spec)) {
    if (entry.linear) continue;
    for (const auto& level : entry.levels) {
      if (!level.applicable) continue;
      out.push_back({entry.attribute, level.level, wtp_ratio(level.coefficient, beta_price)});
    }
  }
  return out;
}

}  // namespace dce
