#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dce/design.hpp"

namespace dce {

// Survey answers, one row per respondent and one column per choice set.
// CSV form: header `personid,block,<set id>...`; cells are option letters.
struct WideResponses {
  struct Row {
    long personid = 0;
    int block = 1;
    std::vector<std::string> choices;  // aligned with set_ids
  };
  std::vector<int> set_ids;
  std::vector<Row> rows;
};

// Columns whose header is a positive integer are choice sets; `personid`
// and `block` are picked by name; everything else (timestamps, socio
// answers) is dropped. Missing personid falls back to the 1-based row
// number, missing block to 1. Cells are trimmed and upper-cased.
WideResponses read_wide_csv(std::istream& in, const std::string& source = "<responses>");
WideResponses read_wide_csv(const std::filesystem::path& path);
void write_wide_csv(std::ostream& out, const WideResponses& wide);
void write_wide_csv(const std::filesystem::path& path, const WideResponses& wide);

// 1 iff the letter names this alternative (A->1, B->2, ...). Throws
// ValidationError for letters outside the first n_alts.
int encode_choice(std::string_view value, int alt, int n_alts = 3);

// Long responses before the design columns are attached.
struct LongRow {
  long personid = 0;
  int block = 1;
  long cs = 0;
  int set_id = 0;
  int alt = 0;
  std::string value;
  int choice = 0;
};

struct LongTable {
  int n_alts = 0;
  std::vector<LongRow> rows;
};

// One row per (respondent, set, alternative), ordered by personid, set id,
// alt. cs numbers each (respondent, set) pair uniquely starting at
// cs_offset + 1.
LongTable reshape_wide_to_long(const WideResponses& wide, int n_alts, long cs_offset = 0);

// Inverse of reshape_wide_to_long for tables it produced.
WideResponses long_to_wide(const LongTable& table);

// Estimation input: personid, cs, choice, alt, then the coded design columns.
struct ChoiceDataLong {
  std::vector<long> personid;
  std::vector<long> cs;
  std::vector<int> choice;
  std::vector<int> alt;
  std::vector<std::string> column_names;
  Eigen::MatrixXd X;

  int n_rows() const { return static_cast<int>(personid.size()); }
  long max_cs() const;
  // Groups are contiguous (personid, cs) runs; each must have the same
  // number of rows and exactly one chosen row. Throws DataError.
  void validate() const;
};

// Attaches the block's design rows to every respondent. The i-th set of
// each respondent is matched to the block set `set_id_map[i]` (defaults to
// the respondent's own set id). Throws AlignmentError on any mismatch.
ChoiceDataLong merge_design(const LongTable& table, const DesignMatrix& block,
                            const std::vector<int>& set_id_map = {});

// Row union of blocks. Person ids that collide with an earlier block are
// shifted past the largest id seen so far; overlapping cs ids throw
// MergeError.
ChoiceDataLong concat_blocks(const std::vector<ChoiceDataLong>& blocks);

void write_long_csv(std::ostream& out, const ChoiceDataLong& data);
void write_long_csv(const std::filesystem::path& path, const ChoiceDataLong& data);
ChoiceDataLong read_long_csv(std::istream& in, const std::string& source = "<long>");
ChoiceDataLong read_long_csv(const std::filesystem::path& path);

}  // namespace dce
