#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "dce/csv.hpp"
#include "dce/design.hpp"
#include "dce/error.hpp"
#include "dce/estimation.hpp"

namespace dce {

std::string format_p_value(double p) {
  if (!std::isfinite(p)) return "NA";
  if (p < 1e-4) return "p<0.0001";
  return fmt::format("{:.4f}", p);
}

std::vector<ReportRow> report_rows(const ModelFit& fit, const ExperimentSpec& spec) {
  if (fit.names.empty() || fit.coef.size() == 0) throw EstimationError("cannot report an empty fit");
  std::vector<ReportRow> rows;
  for (const auto& entry : recover_omitted(fit, spec)) {
    for (const auto& level : entry.levels) {
      rows.push_back({entry.linear ? ReportRow::Kind::linear_price : ReportRow::Kind::level, entry.attribute, level});
    }
  }
  const int cte = fit.index_of(kOptOutColumn);
  if (cte >= 0) {
    LevelCoefficient lc;
    lc.level = "No-choice constant";
    lc.coefficient = fit.coef(cte);
    if (std::isfinite(fit.se(cte))) lc.se = fit.se(cte);
    if (std::isfinite(fit.p_value(cte))) lc.p_value = fit.p_value(cte);
    const int sd = fit.sd_index_of(kOptOutColumn);
    if (sd >= 0) {
      lc.sd = fit.sd(sd);
      if (std::isfinite(fit.sd_se(sd))) lc.sd_se = fit.sd_se(sd);
      if (std::isfinite(fit.sd_p_value(sd))) lc.sd_p_value = fit.sd_p_value(sd);
    }
    rows.push_back({ReportRow::Kind::constant, "Opt-out", lc});
  }
  return rows;
}

namespace {

std::string opt_number(const std::optional<double>& v) { return v ? fmt::format("{:.5f}", *v) : ""; }

std::string coefficient_cell(const LevelCoefficient& lc) {
  return lc.applicable ? fmt::format("{:.5f}", lc.coefficient) : "(reference)";
}

}  // namespace

std::string report_fit(const ModelFit& fit, const ExperimentSpec& spec) {
  const auto rows = report_rows(fit, spec);
  const bool mixed = fit.kind == ModelKind::xlm;
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Attributes", "Levels", "Coefficient", "SE", "p-value"};
  if (mixed) {
    header.insert(header.end(), {"SD", "SD SE", "SD p-value"});
  }
  std::string last_attribute;
  for (const auto& row : rows) {
    std::vector<std::string> line;
    line.push_back(row.attribute == last_attribute ? "" : row.attribute);
    last_attribute = row.attribute;
    line.push_back(row.value.level);
    line.push_back(coefficient_cell(row.value));
    if (row.value.omitted) {
      line.push_back(row.value.applicable ? "(Omitted level)" : "");
      line.push_back("");
    } else {
      line.push_back(opt_number(row.value.se));
      line.push_back(row.value.p_value ? format_p_value(*row.value.p_value) : "");
    }
    if (mixed) {
      line.push_back(opt_number(row.value.sd));
      line.push_back(opt_number(row.value.sd_se));
      line.push_back(row.value.sd_p_value ? format_p_value(*row.value.sd_p_value) : "");
    }
    cells.push_back(std::move(line));
  }
  std::vector<size_t> width(header.size());
  for (size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& line : cells) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream out;
  out << (mixed ? "Mixed logit" : "Conditional logit") << " results\n";
  auto emit = [&](const std::vector<std::string>& line) {
    std::string text;
    for (size_t c = 0; c < line.size(); ++c) {
      text += fmt::format("{:<{}}", line[c], width[c]);
      if (c + 1 < line.size()) text += "  ";
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out << text << '\n';
  };
  emit(header);
  size_t total = 0;
  for (auto w : width) total += w + 2;
  out << std::string(total - 2, '-') << '\n';
  for (const auto& line : cells) emit(line);
  out << std::string(total - 2, '-') << '\n';
  out << fmt::format("Log-likelihood: {:.5f}  (null {:.5f})\n", fit.loglik, fit.null_loglik);
  out << fmt::format("Respondents: {}  Choice sets: {}  Iterations: {}  Converged: {}\n", fit.n_respondents,
                     fit.n_obs, fit.iterations, fit.converged ? "yes" : "no");
  if (mixed) out << fmt::format("Draws: {} ({}), seed {}\n", fit.n_draws, fit.draw_kind, fit.seed);
  const auto importance = attribute_importance(recover_omitted(fit, spec), spec);
  out << "Attribute importance (level range):";
  for (const auto& imp : importance) out << fmt::format(" {}. {} {:.5f};", imp.rank, imp.attribute, imp.importance);
  out << '\n';
  for (const auto& w : fit.warnings) out << "Warning: " << w << '\n';
  return out.str();
}

void write_report_csv(std::ostream& out, const ModelFit& fit, const ExperimentSpec& spec) {
  const bool mixed = fit.kind == ModelKind::xlm;
  std::vector<std::string> header{"attribute", "level", "coefficient", "se", "p_value", "omitted"};
  if (mixed) header.insert(header.end(), {"sd", "sd_se", "sd_p_value"});
  csv::write_row(out, header);
  auto num = [](const std::optional<double>& v) { return v ? csv::format_number(*v) : std::string(); };
  for (const auto& row : report_rows(fit, spec)) {
    std::vector<std::string> line{row.attribute, row.value.level,
                                  row.value.applicable ? csv::format_number(row.value.coefficient) : "",
                                  num(row.value.se), num(row.value.p_value), row.value.omitted ? "1" : "0"};
    if (mixed) {
      line.push_back(num(row.value.sd));
      line.push_back(num(row.value.sd_se));
      line.push_back(num(row.value.sd_p_value));
    }
    csv::write_row(out, line);
  }
}

void write_plot_data(std::ostream& out, const ModelFit& fit, const ExperimentSpec& spec) {
  csv::write_row(out, {"attribute", "level", "coefficient"});
  for (const auto& row : report_rows(fit, spec)) {
    if (row.kind != ReportRow::Kind::level || !row.value.applicable) continue;
    csv::write_row(out, {row.attribute, row.value.level, csv::format_number(row.value.coefficient)});
  }
}

}  // namespace dce
