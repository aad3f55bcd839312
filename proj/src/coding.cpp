#include "dce/coding.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

#include "dce/error.hpp"

namespace dce {

Coding parse_coding(const std::string& text) {
  if (text == "effects" || text == "E" || text == "e") return Coding::effects;
  if (text == "dummy" || text == "D" || text == "d") return Coding::dummy;
  throw DomainError(fmt::format("unknown coding '{}' (expected effects or dummy)", text));
}

std::string to_string(Coding coding) {
  return coding == Coding::effects ? "effects" : "dummy";
}

void ExperimentSpec::validate() const {
  if (attributes.empty()) throw DomainError("experiment needs at least one attribute");
  int n_price = 0;
  for (const auto& attr : attributes) {
    if (attr.name.empty()) throw DomainError("attribute with empty name");
    if (attr.levels.size() < 2) {
      throw DomainError(fmt::format("attribute '{}' needs at least 2 levels", attr.name));
    }
    std::set<std::string> seen(attr.levels.begin(), attr.levels.end());
    if (seen.size() != attr.levels.size()) {
      throw DomainError(fmt::format("attribute '{}' has duplicate level labels", attr.name));
    }
    if (attr.is_price) {
      ++n_price;
      if (!attr.values.empty() && attr.values.size() != attr.levels.size()) {
        throw DomainError(fmt::format("price attribute '{}': {} values for {} levels", attr.name,
                                      attr.values.size(), attr.levels.size()));
      }
    }
  }
  if (n_price > 1) throw DomainError("at most one attribute may be flagged as price");
  if (n_alts < 2) throw DomainError("a choice set needs at least 2 alternatives");
  if (no_choice && n_alts < 3) {
    throw DomainError("with an opt-out, at least 3 alternatives are required (2 profiles + opt-out)");
  }
  if (n_sets < 1) throw DomainError("n_sets must be positive");
  if (n_blocks < 1) throw DomainError("n_blocks must be positive");
  if (n_sets % n_blocks != 0) {
    throw DomainError(fmt::format("n_sets ({}) is not divisible by n_blocks ({})", n_sets, n_blocks));
  }
}

int ExperimentSpec::total_levels() const {
  int l = 0;
  for (const auto& a : attributes) l += a.n_levels();
  return l;
}

int ExperimentSpec::attribute_width() const { return total_levels() - n_attributes(); }

int ExperimentSpec::attribute_offset(int a) const {
  int off = 0;
  for (int i = 0; i < a; ++i) off += attributes[i].coded_width();
  return off;
}

int ExperimentSpec::price_attribute() const {
  for (int a = 0; a < n_attributes(); ++a) {
    if (attributes[a].is_price) return a;
  }
  return -1;
}

std::vector<std::string> ExperimentSpec::attribute_column_names() const {
  std::vector<std::string> names;
  for (int a = 0; a < n_attributes(); ++a) {
    for (int j = 0; j < attributes[a].coded_width(); ++j) {
      names.push_back(fmt::format("Var{}{}", a + 1, j + 1));
    }
  }
  return names;
}

ExperimentSpec parse_experiment_spec(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("experiment spec: {}", e.what()));
  }
  ExperimentSpec spec;
  try {
    for (const auto& a : doc.at("attributes")) {
      AttributeSpec attr;
      attr.name = a.at("name").get<std::string>();
      attr.levels = a.at("levels").get<std::vector<std::string>>();
      attr.coding = parse_coding(a.value("coding", std::string("effects")));
      attr.is_price = a.value("is_price", false);
      attr.unit = a.value("unit", std::string());
      if (a.contains("values")) attr.values = a.at("values").get<std::vector<double>>();
      spec.attributes.push_back(std::move(attr));
    }
    spec.n_alts = doc.value("n_alts", 2);
    spec.n_sets = doc.value("n_sets", 1);
    spec.no_choice = doc.value("no_choice", false);
    spec.n_blocks = doc.value("n_blocks", 1);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("experiment spec: {}", e.what()));
  }
  spec.validate();
  return spec;
}

ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open experiment spec '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_spec(buf.str());
}

std::vector<Profile> enumerate_profiles(const ExperimentSpec& spec) {
  if (spec.attributes.empty()) throw DomainError("experiment needs at least one attribute");
  const int k = spec.n_attributes();
  std::vector<Profile> out;
  Profile current{std::vector<int>(k, 1)};
  while (true) {
    out.push_back(current);
    int pos = k - 1;
    while (pos >= 0 && current.levels[pos] == spec.attributes[pos].n_levels()) {
      current.levels[pos] = 1;
      --pos;
    }
    if (pos < 0) break;
    ++current.levels[pos];
  }
  return out;
}

std::uint64_t count_pairwise_choice_sets(std::uint64_t n_profiles) {
  if (n_profiles < 2) throw DomainError("pairing needs at least 2 profiles");
  return n_profiles * (n_profiles - 1) / 2;
}

Eigen::VectorXd encode_level(int level, int n_levels, Coding coding) {
  if (level < 1 || level > n_levels) {
    throw DomainError(fmt::format("level {} outside 1..{}", level, n_levels));
  }
  Eigen::VectorXd code = Eigen::VectorXd::Zero(n_levels - 1);
  if (coding == Coding::effects) {
    if (level == n_levels) {
      code.setConstant(-1.0);
    } else {
      code(level - 1) = 1.0;
    }
  } else if (level > 1) {
    code(level - 2) = 1.0;
  }
  return code;
}

Eigen::VectorXd encode_profile(const Profile& profile, const ExperimentSpec& spec) {
  if (static_cast<int>(profile.levels.size()) != spec.n_attributes()) {
    throw DomainError("profile length does not match the number of attributes");
  }
  Eigen::VectorXd row(spec.attribute_width());
  int off = 0;
  for (int a = 0; a < spec.n_attributes(); ++a) {
    const auto& attr = spec.attributes[a];
    row.segment(off, attr.coded_width()) = encode_level(profile.levels[a], attr.n_levels(), attr.coding);
    off += attr.coded_width();
  }
  return row;
}

int decode_level(const Eigen::Ref<const Eigen::VectorXd>& block, Coding coding) {
  const int width = static_cast<int>(block.size());
  const int n_levels = width + 1;
  for (int level = 1; level <= n_levels; ++level) {
    const Eigen::VectorXd code = encode_level(level, n_levels, coding);
    if ((code - block).cwiseAbs().maxCoeff() < 1e-9) return level;
  }
  return 0;
}

Profile decode_row(const Eigen::Ref<const Eigen::VectorXd>& row, const ExperimentSpec& spec) {
  if (row.size() != spec.attribute_width()) {
    throw DecodeError(fmt::format("coded row has {} columns, expected {}", row.size(),
                                  spec.attribute_width()));
  }
  Profile p;
  int off = 0;
  for (const auto& attr : spec.attributes) {
    const int level = decode_level(row.segment(off, attr.coded_width()), attr.coding);
    if (level == 0) {
      throw DecodeError(fmt::format("attribute '{}': code block matches no level", attr.name));
    }
    p.levels.push_back(level);
    off += attr.coded_width();
  }
  return p;
}

}  // namespace dce
