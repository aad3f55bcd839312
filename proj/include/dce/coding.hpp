#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dce {

enum class Coding { effects, dummy };

Coding parse_coding(const std::string& text);
std::string to_string(Coding coding);

// One experimental attribute and its ordered levels.
//
// Effects coding omits the last level (all -1 on the attribute's columns);
// dummy coding uses level 1 as the reference (all 0).
struct AttributeSpec {
  std::string name;
  std::vector<std::string> levels;
  Coding coding = Coding::effects;
  bool is_price = false;
  // Monetary unit and numeric amount per level, only meaningful for the
  // price attribute. Used by the linear-price refit.
  std::string unit;
  std::vector<double> values;

  int n_levels() const { return static_cast<int>(levels.size()); }
  int coded_width() const { return n_levels() - 1; }
};

struct ExperimentSpec {
  std::vector<AttributeSpec> attributes;
  int n_alts = 2;  // includes the opt-out alternative when no_choice is set
  int n_sets = 1;
  bool no_choice = false;
  int n_blocks = 1;

  // Throws DomainError if any invariant is broken.
  void validate() const;

  int n_attributes() const { return static_cast<int>(attributes.size()); }
  int total_levels() const;
  // l - k: columns spanned by the attribute codes.
  int attribute_width() const;
  // Full design width: attribute columns plus the opt-out constant.
  int design_width() const { return attribute_width() + (no_choice ? 1 : 0); }
  // Alternatives built from profiles (the opt-out is excluded).
  int n_profile_alts() const { return no_choice ? n_alts - 1 : n_alts; }
  // First coded column of attribute `a` within an attribute-code row.
  int attribute_offset(int a) const;
  // Index of the price attribute, -1 when there is none.
  int price_attribute() const;

  // Var11, Var12, Var21, ... : attribute index then column index, 1-based.
  std::vector<std::string> attribute_column_names() const;
};

// Reads the JSON experiment config and validates it.
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);
ExperimentSpec parse_experiment_spec(const std::string& json_text);

// Level index per attribute, 1-based.
struct Profile {
  std::vector<int> levels;

  friend bool operator==(const Profile&, const Profile&) = default;
  friend auto operator<=>(const Profile&, const Profile&) = default;
};

// Full factorial in lexicographic order, last attribute varying fastest.
std::vector<Profile> enumerate_profiles(const ExperimentSpec& spec);

// Number of unordered pairs of distinct profiles, n(n-1)/2.
std::uint64_t count_pairwise_choice_sets(std::uint64_t n_profiles);

// Coded attribute row of length l - k (no opt-out constant).
Eigen::VectorXd encode_profile(const Profile& profile, const ExperimentSpec& spec);

// Per-attribute code block for a single level.
Eigen::VectorXd encode_level(int level, int n_levels, Coding coding);

// Inverse of encode_profile. Throws DecodeError naming the attribute whose
// block matches no level.
Profile decode_row(const Eigen::Ref<const Eigen::VectorXd>& row, const ExperimentSpec& spec);

// Level index encoded by one attribute's block, or 0 if it matches none.
int decode_level(const Eigen::Ref<const Eigen::VectorXd>& block, Coding coding);

}  // namespace dce
