// dce: design, field and analyse discrete choice experiments.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "CLI11.hpp"
#include "dce/coding.hpp"
#include "dce/csv.hpp"
#include "dce/design.hpp"
#include "dce/error.hpp"
#include "dce/estimation.hpp"
#include "dce/pipeline.hpp"
#include "dce/service.hpp"
#include "dce/simulate.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dce::DataError("cannot hash " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 15];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

// Inputs, outputs and seeds of one command, written with --manifest.
struct RunManifest {
  std::string command;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::map<std::string, std::uint64_t> seeds;

  void write(const fs::path& path) const {
    auto list = [](const std::vector<fs::path>& paths) {
      json out = json::array();
      for (const auto& p : paths) out.push_back(json{{"path", p.string()}, {"sha256", sha256_file(p)}});
      return out;
    };
    json j{{"tool", "dce"},
           {"version", kVersion},
           {"command", command},
           {"seeds", seeds},
           {"inputs", list(inputs)},
           {"outputs", list(outputs)}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw dce::DataError("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
  }
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dce::DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dce::DataError("cannot write " + path.string());
  out << text;
}

// Coefficient vector keyed by design column: either an array in column order
// or an object {"Var11": 0.5, ...} with missing columns at 0.
Eigen::VectorXd coefficient_vector(const json& j, const std::vector<std::string>& columns, const std::string& what) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(columns.size()));
  if (j.is_null()) return v;
  if (j.is_array()) {
    if (j.size() != columns.size()) {
      throw dce::DomainError(fmt::format("{} has {} entries, the design has {} columns", what, j.size(), columns.size()));
    }
    for (size_t i = 0; i < columns.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
  }
  if (!j.is_object()) throw dce::FormatError(what + " must be an array or an object");
  for (const auto& [name, value] : j.items()) {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw dce::DomainError(fmt::format("{}: unknown column {}", what, name));
    v(it - columns.begin()) = value.get<double>();
  }
  return v;
}

struct Options {
  fs::path spec, priors, design, out, out_dir, data, fit, truth, survey, data_dir, ui_dir, manifest;
  fs::path csv_out, plot_out, report_out;
  std::vector<fs::path> responses;
  std::uint64_t seed = 1;
  int threads = 1;
  int restarts = 1;
  int max_sweeps = 50;
  int respondents = 100;
  bool linear_price = false;
  std::vector<std::string> random;
  int draws = 100;
  std::string draw_kind = "halton";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string admin_token;
};

int cmd_design(const Options& o) {
  const auto spec = dce::load_experiment_spec(o.spec);
  const auto prior = dce::load_prior_spec(o.priors);
  dce::CeaOptions cea;
  cea.n_restarts = o.restarts;
  cea.threads = o.threads;
  cea.max_sweeps = o.max_sweeps;
  const auto result = dce::cea_optimize(spec, prior, o.seed, cea);
  dce::write_design_csv(o.out, result.design);
  std::cout << fmt::format("design: {} sets x {} alternatives, {} columns -> {}\n", result.design.n_sets(),
                           result.design.n_alts, result.design.n_cols(), o.out.string());
  std::cout << fmt::format("DB-error: {:.6f} (random start {:.6f}), sweeps {}, converged {}\n", result.d_error,
                           result.initial_d_error, result.iterations, result.converged ? "yes" : "no");
  if (!o.manifest.empty()) {
    RunManifest m{"design", {o.spec, o.priors}, {o.out}, {{"seed", o.seed}}};
    m.write(o.manifest);
  }
  return 0;
}

int cmd_simulate(const Options& o) {
  const auto spec = dce::load_experiment_spec(o.spec);
  const auto design = dce::read_design_csv(o.design);
  json truth = json::object();
  if (!o.truth.empty()) {
    try {
      truth = json::parse(read_text(o.truth));
    } catch (const json::exception& e) {
      throw dce::FormatError(o.truth.string() + ": " + e.what());
    }
  }
  dce::SimulationConfig cfg;
  cfg.true_means = coefficient_vector(truth.value("means", json()), design.column_names, "means");
  cfg.true_sds = coefficient_vector(truth.value("sds", json()), design.column_names, "sds");
  cfg.n_respondents = o.respondents;
  cfg.seed = o.seed;
  fs::create_directories(o.out_dir);
  RunManifest m{"simulate", {o.spec, o.design}, {}, {{"seed", o.seed}}};
  if (!o.truth.empty()) m.inputs.push_back(o.truth);
  const auto blocks = dce::block_design(design, spec.n_blocks);
  for (size_t b = 0; b < blocks.size(); ++b) {
    cfg.block = static_cast<int>(b) + 1;
    cfg.first_personid = static_cast<long>(b) * o.respondents + 1;
    const auto wide = dce::simulate_responses(blocks[b], cfg);
    const auto path = o.out_dir / fmt::format("responses_block{}.csv", b + 1);
    dce::write_wide_csv(path, wide);
    m.outputs.push_back(path);
    std::cout << fmt::format("block {}: {} respondents x {} sets -> {}\n", b + 1, wide.rows.size(),
                             wide.set_ids.size(), path.string());
  }
  if (!o.manifest.empty()) m.write(o.manifest);
  return 0;
}

int cmd_reshape(const Options& o) {
  const auto spec = dce::load_experiment_spec(o.spec);
  const auto design = dce::read_design_csv(o.design);
  const auto blocks = dce::block_design(design, spec.n_blocks);
  // Group respondents by block across all input files.
  std::map<int, dce::WideResponses> by_block;
  for (const auto& path : o.responses) {
    const auto wide = dce::read_wide_csv(path);
    for (const auto& row : wide.rows) {
      auto& target = by_block[row.block];
      if (target.set_ids.empty()) {
        target.set_ids = wide.set_ids;
      } else if (target.set_ids != wide.set_ids) {
        throw dce::AlignmentError(fmt::format("{}: block {} has different set columns in another file",
                                              path.string(), row.block));
      }
      target.rows.push_back(row);
    }
  }
  std::vector<dce::ChoiceDataLong> parts;
  long cs_offset = 0;
  for (const auto& [block, wide] : by_block) {
    if (block < 1 || block > static_cast<int>(blocks.size())) {
      throw dce::AlignmentError(fmt::format("responses name block {}, the design has {} blocks", block, blocks.size()));
    }
    const auto table = dce::reshape_wide_to_long(wide, design.n_alts, cs_offset);
    parts.push_back(dce::merge_design(table, blocks[block - 1]));
    cs_offset = parts.back().max_cs();
  }
  if (parts.empty()) throw dce::DataError("no responses to reshape");
  const auto merged = dce::concat_blocks(parts);
  dce::write_long_csv(o.out, merged);
  std::cout << fmt::format("long data: {} rows, {} choice sets -> {}\n", merged.n_rows(), merged.max_cs(),
                           o.out.string());
  if (!o.manifest.empty()) {
    RunManifest m{"reshape", {o.spec, o.design}, {o.out}, {}};
    m.inputs.insert(m.inputs.end(), o.responses.begin(), o.responses.end());
    m.write(o.manifest);
  }
  return 0;
}

dce::ChoiceDataLong load_model_data(const Options& o) {
  auto data = dce::read_long_csv(o.data);
  if (o.linear_price) {
    if (o.spec.empty()) throw dce::DomainError("--linear-price needs --spec");
    data = dce::linearize_price(data, dce::load_experiment_spec(o.spec));
  }
  return data;
}

void finish_fit(const Options& o, const dce::ModelFit& fit, const std::string& command) {
  dce::save_fit(o.out, fit);
  std::cout << fmt::format("{}: log-likelihood {:.5f}, {} iterations, converged {} -> {}\n", command, fit.loglik,
                           fit.iterations, fit.converged ? "yes" : "no", o.out.string());
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';
  if (!o.manifest.empty()) {
    RunManifest m{command, {o.data}, {o.out}, {}};
    if (!o.spec.empty()) m.inputs.push_back(o.spec);
    if (fit.kind == dce::ModelKind::xlm) m.seeds["seed"] = fit.seed;
    m.write(o.manifest);
  }
}

int cmd_fit_clm(const Options& o) {
  const auto fit = dce::fit_clm(load_model_data(o));
  finish_fit(o, fit, "fit-clm");
  return fit.converged ? 0 : 1;
}

int cmd_fit_xlm(const Options& o) {
  const auto data = load_model_data(o);
  dce::RandomCoefSpec rc;
  rc.names = o.random.empty() ? data.column_names : o.random;
  rc.n_draws = o.draws;
  rc.draw_kind = dce::parse_draw_kind(o.draw_kind);
  dce::XlmOptions xo;
  xo.threads = o.threads;
  const auto fit = dce::fit_xlm(data, rc, o.seed, xo);
  finish_fit(o, fit, "fit-xlm");
  return fit.converged ? 0 : 1;
}

int cmd_wtp(const Options& o) {
  const auto spec = dce::load_experiment_spec(o.spec);
  const auto fit = dce::load_fit(o.fit);
  const auto entries = dce::wtp(fit, spec);
  const auto& unit = spec.attributes[spec.price_attribute()].unit;
  std::ostringstream text;
  dce::csv::write_row(text, {"attribute", "level", unit.empty() ? "wtp" : "wtp (" + unit + ")"});
  for (const auto& e : entries) dce::csv::write_row(text, {e.attribute, e.level, fmt::format("{:.5f}", e.value)});
  if (o.out.empty()) {
    std::cout << text.str();
  } else {
    write_text(o.out, text.str());
  }
  return 0;
}

int cmd_report(const Options& o) {
  const auto spec = dce::load_experiment_spec(o.spec);
  const auto fit = dce::load_fit(o.fit);
  const auto text = dce::report_fit(fit, spec);
  RunManifest m{"report", {o.spec, o.fit}, {}, {}};
  if (o.report_out.empty()) {
    std::cout << text;
  } else {
    write_text(o.report_out, text);
    m.outputs.push_back(o.report_out);
  }
  if (!o.csv_out.empty()) {
    std::ofstream out(o.csv_out, std::ios::binary);
    dce::write_report_csv(out, fit, spec);
    m.outputs.push_back(o.csv_out);
  }
  if (!o.plot_out.empty()) {
    std::ofstream out(o.plot_out, std::ios::binary);
    dce::write_plot_data(out, fit, spec);
    m.outputs.push_back(o.plot_out);
  }
  if (!o.manifest.empty()) m.write(o.manifest);
  return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const Options& o) {
  const auto spec = dce::load_experiment_spec(o.spec);
  const auto design = dce::read_design_csv(o.design);
  dce::SurveyDefinition text;
  if (!o.survey.empty()) text = dce::parse_survey_text(read_text(o.survey));
  auto survey = dce::build_survey_definition(spec, design, text);
  dce::ServiceOptions so;
  so.data_dir = o.data_dir;
  so.seed = o.seed;
  dce::SurveyService service(std::move(survey), so);
  if (o.admin_token.empty()) std::cerr << "warning: no admin token set, export is disabled\n";
  httplib::Server server;
  dce::register_routes(server, service, o.admin_token, o.ui_dir);
  g_server = &server;
  std::signal(SIGINT, [](int) { g_server->stop(); });
  std::signal(SIGTERM, [](int) { g_server->stop(); });
  std::cout << fmt::format("serving on http://{}:{} (data in {})\n", o.host, o.port, o.data_dir.string())
            << std::flush;
  if (!server.listen(o.host, o.port)) throw dce::DataError(fmt::format("cannot listen on {}:{}", o.host, o.port));
  return 0;
}

// Environment variables for options not given on the command line. They are
// turned into flags so they take precedence over the config file.
const std::vector<std::pair<const char*, const char*>> kEnvOptions = {
    {"DCE_SEED", "--seed"},         {"DCE_THREADS", "--threads"}, {"DCE_DATA_DIR", "--data-dir"},
    {"DCE_HOST", "--host"},         {"DCE_PORT", "--port"},       {"DCE_ADMIN_TOKEN", "--admin-token"},
    {"DCE_UI_DIR", "--ui-dir"},
};

std::vector<std::string> with_env_flags(const CLI::App& app, std::vector<std::string> args) {
  const CLI::App* sub = nullptr;
  for (const auto& a : args) {
    if (!a.empty() && a[0] != '-') {
      try {
        sub = app.get_subcommand(a);
      } catch (const CLI::OptionNotFound&) {
      }
      break;
    }
  }
  if (!sub) return args;
  for (const auto& [env, flag] : kEnvOptions) {
    const char* value = std::getenv(env);
    if (!value || !*value || !sub->get_option_no_throw(flag)) continue;
    const std::string f(flag);
    const bool given = std::any_of(args.begin(), args.end(),
                                   [&](const std::string& a) { return a == f || a.rfind(f + "=", 0) == 0; });
    if (!given) {
      args.push_back(f);
      args.push_back(value);
    }
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete choice experiment toolkit", "dce"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML/INI file with option defaults ([subcommand] sections)");
  Options o;

  auto seed_opt = [&](CLI::App* s) { s->add_option("--seed", o.seed, "Random seed")->capture_default_str(); };
  auto threads_opt = [&](CLI::App* s) {
    s->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  };
  auto manifest_opt = [&](CLI::App* s) { s->add_option("--manifest", o.manifest, "Write a run manifest (JSON)"); };
  auto spec_opt = [&](CLI::App* s, bool required) {
    auto opt = s->add_option("--spec", o.spec, "Experiment spec (JSON)")->check(CLI::ExistingFile);
    if (required) opt->required();
  };

  auto* design = app.add_subcommand("design", "Optimise a design by coordinate exchange");
  spec_opt(design, true);
  design->add_option("--priors", o.priors, "Prior coefficient spec (JSON)")->required()->check(CLI::ExistingFile);
  design->add_option("--out", o.out, "Design CSV")->required();
  design->add_option("--restarts", o.restarts, "Random starts")->check(CLI::PositiveNumber)->capture_default_str();
  design->add_option("--max-sweeps", o.max_sweeps, "Sweep limit")->check(CLI::PositiveNumber)->capture_default_str();
  seed_opt(design);
  threads_opt(design);
  manifest_opt(design);

  auto* simulate = app.add_subcommand("simulate", "Simulate wide responses for each block of a design");
  spec_opt(simulate, true);
  simulate->add_option("--design", o.design, "Design CSV")->required()->check(CLI::ExistingFile);
  simulate->add_option("--truth", o.truth, "True coefficients (JSON: means, sds)")->check(CLI::ExistingFile);
  simulate->add_option("--respondents", o.respondents, "Respondents per block")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  simulate->add_option("--out-dir", o.out_dir, "Directory for responses_block<b>.csv")->required();
  seed_opt(simulate);
  manifest_opt(simulate);

  auto* reshape = app.add_subcommand("reshape", "Wide responses to long model data");
  spec_opt(reshape, true);
  reshape->add_option("--design", o.design, "Design CSV")->required()->check(CLI::ExistingFile);
  reshape->add_option("--responses", o.responses, "Wide response CSVs")->required()->check(CLI::ExistingFile);
  reshape->add_option("--out", o.out, "Long CSV")->required();
  manifest_opt(reshape);

  auto* fit_clm = app.add_subcommand("fit-clm", "Conditional logit");
  fit_clm->add_option("--data", o.data, "Long CSV")->required()->check(CLI::ExistingFile);
  spec_opt(fit_clm, false);
  fit_clm->add_flag("--linear-price", o.linear_price, "Numeric price column instead of price levels");
  fit_clm->add_option("--out", o.out, "Fit (JSON)")->required();
  manifest_opt(fit_clm);

  auto* fit_xlm = app.add_subcommand("fit-xlm", "Mixed logit with normal random coefficients");
  fit_xlm->add_option("--data", o.data, "Long CSV")->required()->check(CLI::ExistingFile);
  spec_opt(fit_xlm, false);
  fit_xlm->add_flag("--linear-price", o.linear_price, "Numeric price column instead of price levels");
  fit_xlm->add_option("--random", o.random, "Random columns (default: all)")->delimiter(',');
  fit_xlm->add_option("--draws", o.draws, "Draws per respondent")->check(CLI::PositiveNumber)->capture_default_str();
  fit_xlm->add_option("--draw-kind", o.draw_kind, "halton or pseudo")
      ->check(CLI::IsMember({"halton", "pseudo"}))
      ->capture_default_str();
  fit_xlm->add_option("--out", o.out, "Fit (JSON)")->required();
  seed_opt(fit_xlm);
  threads_opt(fit_xlm);
  manifest_opt(fit_xlm);

  auto* wtp = app.add_subcommand("wtp", "Willingness to pay from a linear-price fit");
  wtp->add_option("--fit", o.fit, "Fit (JSON)")->required()->check(CLI::ExistingFile);
  spec_opt(wtp, true);
  wtp->add_option("--out", o.out, "CSV (default: stdout)");

  auto* report = app.add_subcommand("report", "Coefficient table, importance and plot data");
  report->add_option("--fit", o.fit, "Fit (JSON)")->required()->check(CLI::ExistingFile);
  spec_opt(report, true);
  report->add_option("--out", o.report_out, "Text report (default: stdout)");
  report->add_option("--csv", o.csv_out, "Report as CSV");
  report->add_option("--plot", o.plot_out, "Plot data CSV (attribute, level, coefficient)");
  manifest_opt(report);

  auto* serve = app.add_subcommand("serve", "Run the survey service");
  spec_opt(serve, true);
  serve->add_option("--design", o.design, "Design CSV")->required()->check(CLI::ExistingFile);
  serve->add_option("--survey", o.survey, "Survey text (JSON)")->check(CLI::ExistingFile);
  serve->add_option("--data-dir", o.data_dir, "Event log directory")->required();
  serve->add_option("--ui-dir", o.ui_dir, "Static UI directory")->check(CLI::ExistingDirectory);
  serve->add_option("--host", o.host, "Bind address")->capture_default_str();
  serve->add_option("--port", o.port, "Port")->check(CLI::Range(1, 65535))->capture_default_str();
  serve->add_option("--admin-token", o.admin_token, "Token for the export endpoint");
  seed_opt(serve);

  std::vector<std::string> args(argv + 1, argv + argc);
  args = with_env_flags(app, std::move(args));
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*design) return cmd_design(o);
    if (*simulate) return cmd_simulate(o);
    if (*reshape) return cmd_reshape(o);
    if (*fit_clm) return cmd_fit_clm(o);
    if (*fit_xlm) return cmd_fit_xlm(o);
    if (*wtp) return cmd_wtp(o);
    if (*report) return cmd_report(o);
    if (*serve) return cmd_serve(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
