#include "dce/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "dce/csv.hpp"
#include "dce/error.hpp"

namespace dce {

namespace {

bool is_set_header(const std::string& h) {
  return !h.empty() && h.size() < 9 && std::all_of(h.begin(), h.end(), [](unsigned char c) { return std::isdigit(c); }) &&
         std::stoi(h) > 0;
}

std::string normalize_letter(std::string_view cell) {
  std::string s = csv::trim(cell);
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

WideResponses read_wide_csv(std::istream& in, const std::string& source) {
  const csv::Table t = csv::read(in, source);
  const int person_col = t.column("personid");
  const int block_col = t.column("block");
  std::vector<int> set_cols;
  WideResponses wide;
  for (size_t c = 0; c < t.header.size(); ++c) {
    if (is_set_header(t.header[c])) {
      set_cols.push_back(static_cast<int>(c));
      wide.set_ids.push_back(std::stoi(t.header[c]));
    }
  }
  if (set_cols.empty()) throw FormatError(fmt::format("{}: no choice-set columns in header", source));
  if (std::set<int>(wide.set_ids.begin(), wide.set_ids.end()).size() != wide.set_ids.size()) {
    throw FormatError(fmt::format("{}: duplicate choice-set column", source));
  }
  for (size_t r = 0; r < t.rows.size(); ++r) {
    WideResponses::Row row;
    row.personid = person_col >= 0 ? csv::parse_int(t.rows[r][person_col], source, t.lines[r])
                                   : static_cast<long>(r + 1);
    row.block = block_col >= 0 ? static_cast<int>(csv::parse_int(t.rows[r][block_col], source, t.lines[r])) : 1;
    for (int c : set_cols) {
      row.choices.push_back(normalize_letter(t.rows[r][c]));
      if (row.choices.back().empty()) {
        throw FormatError(fmt::format("{}:{}: empty response for set {} (incomplete rows are rejected)", source,
                                      t.lines[r], t.header[c]));
      }
    }
    wide.rows.push_back(std::move(row));
  }
  return wide;
}

WideResponses read_wide_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open responses '{}'", path.string()));
  return read_wide_csv(in, path.string());
}

void write_wide_csv(std::ostream& out, const WideResponses& wide) {
  std::vector<std::string> header{"personid", "block"};
  for (int id : wide.set_ids) header.push_back(std::to_string(id));
  csv::write_row(out, header);
  for (const auto& row : wide.rows) {
    std::vector<std::string> fields{std::to_string(row.personid), std::to_string(row.block)};
    fields.insert(fields.end(), row.choices.begin(), row.choices.end());
    csv::write_row(out, fields);
  }
}

void write_wide_csv(const std::filesystem::path& path, const WideResponses& wide) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write '{}'", path.string()));
  write_wide_csv(out, wide);
}

int encode_choice(std::string_view value, int alt, int n_alts) {
  const std::string letter = normalize_letter(value);
  if (letter.size() != 1 || letter[0] < 'A' || letter[0] >= 'A' + n_alts) {
    throw ValidationError(fmt::format("invalid option '{}' (expected A..{})", std::string(value),
                                      static_cast<char>('A' + n_alts - 1)));
  }
  return letter[0] - 'A' + 1 == alt ? 1 : 0;
}

LongTable reshape_wide_to_long(const WideResponses& wide, int n_alts, long cs_offset) {
  if (n_alts < 2 || n_alts > 26) throw DomainError("n_alts must be in 2..26");
  if (wide.rows.empty() || wide.set_ids.empty()) throw FormatError("wide responses are empty");
  for (size_t r = 0; r < wide.rows.size(); ++r) {
    if (wide.rows[r].choices.size() != wide.set_ids.size()) {
      throw FormatError(fmt::format("response row {} has {} cells, expected {}", r + 1,
                                    wide.rows[r].choices.size(), wide.set_ids.size()));
    }
  }
  std::vector<size_t> people(wide.rows.size());
  std::iota(people.begin(), people.end(), size_t{0});
  std::stable_sort(people.begin(), people.end(),
                   [&](size_t a, size_t b) { return wide.rows[a].personid < wide.rows[b].personid; });
  for (size_t i = 1; i < people.size(); ++i) {
    if (wide.rows[people[i]].personid == wide.rows[people[i - 1]].personid) {
      throw FormatError(fmt::format("duplicate personid {}", wide.rows[people[i]].personid));
    }
  }
  std::vector<size_t> sets(wide.set_ids.size());
  std::iota(sets.begin(), sets.end(), size_t{0});
  std::sort(sets.begin(), sets.end(), [&](size_t a, size_t b) { return wide.set_ids[a] < wide.set_ids[b]; });

  LongTable out;
  out.n_alts = n_alts;
  out.rows.reserve(people.size() * sets.size() * n_alts);
  long cs = cs_offset;
  for (size_t p : people) {
    const auto& person = wide.rows[p];
    for (size_t s : sets) {
      ++cs;
      const std::string& value = person.choices[s];
      for (int alt = 1; alt <= n_alts; ++alt) {
        int choice = 0;
        try {
          choice = encode_choice(value, alt, n_alts);
        } catch (const ValidationError& e) {
          throw ValidationError(fmt::format("personid {}, set {}: {}", person.personid, wide.set_ids[s], e.what()));
        }
        out.rows.push_back({person.personid, person.block, cs, wide.set_ids[s], alt, value, choice});
      }
    }
  }
  return out;
}

WideResponses long_to_wide(const LongTable& table) {
  WideResponses wide;
  if (table.rows.empty()) return wide;
  const long first = table.rows.front().personid;
  for (const auto& r : table.rows) {
    if (r.personid != first) break;
    if (r.alt == 1) wide.set_ids.push_back(r.set_id);
  }
  for (const auto& r : table.rows) {
    if (wide.rows.empty() || wide.rows.back().personid != r.personid) {
      wide.rows.push_back({r.personid, r.block, {}});
    }
    if (r.alt == 1) wide.rows.back().choices.push_back(r.value);
  }
  return wide;
}

long ChoiceDataLong::max_cs() const {
  return cs.empty() ? 0 : *std::max_element(cs.begin(), cs.end());
}

void ChoiceDataLong::validate() const {
  const size_t n = personid.size();
  if (cs.size() != n || choice.size() != n || alt.size() != n || static_cast<size_t>(X.rows()) != n) {
    throw DataError("long data columns have different lengths");
  }
  if (static_cast<size_t>(X.cols()) != column_names.size()) throw DataError("design column names mismatch");
  int group_size = -1;
  size_t start = 0;
  std::set<std::pair<long, long>> seen;
  while (start < n) {
    size_t end = start;
    int chosen = 0;
    while (end < n && personid[end] == personid[start] && cs[end] == cs[start]) {
      if (choice[end] != 0 && choice[end] != 1) {
        throw DataError(fmt::format("row {}: choice must be 0 or 1", end + 1));
      }
      chosen += choice[end];
      ++end;
    }
    if (!seen.emplace(personid[start], cs[start]).second) {
      throw DataError(fmt::format("choice set (personid {}, cs {}) is not contiguous", personid[start], cs[start]));
    }
    const int size = static_cast<int>(end - start);
    if (group_size < 0) group_size = size;
    if (size != group_size) {
      throw DataError(fmt::format("choice set (personid {}, cs {}) has {} rows, expected {}", personid[start],
                                  cs[start], size, group_size));
    }
    if (chosen != 1) {
      throw DataError(fmt::format("choice set (personid {}, cs {}) has {} chosen alternatives, expected 1",
                                  personid[start], cs[start], chosen));
    }
    start = end;
  }
}

ChoiceDataLong merge_design(const LongTable& table, const DesignMatrix& block, const std::vector<int>& set_id_map) {
  ChoiceDataLong out;
  out.column_names = block.column_names;
  if (table.n_alts != block.n_alts) {
    throw AlignmentError(fmt::format("responses have {} alternatives per set, design block has {}", table.n_alts,
                                     block.n_alts));
  }
  const size_t block_rows = static_cast<size_t>(block.n_rows());
  out.X.resize(static_cast<Eigen::Index>(table.rows.size()), block.n_cols());
  size_t start = 0;
  size_t out_row = 0;
  while (start < table.rows.size()) {
    size_t end = start;
    while (end < table.rows.size() && table.rows[end].personid == table.rows[start].personid) ++end;
    const long pid = table.rows[start].personid;
    if (end - start != block_rows) {
      throw AlignmentError(fmt::format("personid {} has {} long rows but the design block has {} rows", pid,
                                       end - start, block_rows));
    }
    for (size_t i = 0; i < block_rows; ++i) {
      const LongRow& row = table.rows[start + i];
      const size_t set_index = i / static_cast<size_t>(block.n_alts);
      int declared = row.set_id;
      if (!set_id_map.empty()) {
        if (set_index >= set_id_map.size()) throw AlignmentError("set id map is shorter than the block");
        declared = set_id_map[set_index];
      }
      if (declared != block.set_ids[i] || row.alt != block.alt_ids[i]) {
        throw AlignmentError(fmt::format("personid {}: response (set {}, alt {}) lines up with design row (set {}, alt {})",
                                         pid, declared, row.alt, block.set_ids[i], block.alt_ids[i]));
      }
      out.personid.push_back(row.personid);
      out.cs.push_back(row.cs);
      out.choice.push_back(row.choice);
      out.alt.push_back(row.alt);
      out.X.row(static_cast<Eigen::Index>(out_row++)) = block.X.row(static_cast<Eigen::Index>(i));
    }
    start = end;
  }
  return out;
}

ChoiceDataLong concat_blocks(const std::vector<ChoiceDataLong>& blocks) {
  if (blocks.empty()) throw MergeError("nothing to concatenate");
  ChoiceDataLong out;
  out.column_names = blocks.front().column_names;
  Eigen::Index total = 0;
  for (const auto& b : blocks) {
    if (b.column_names != out.column_names) throw MergeError("blocks have different design columns");
    total += b.n_rows();
  }
  out.X.resize(total, static_cast<Eigen::Index>(out.column_names.size()));
  std::set<long> seen_cs;
  std::set<long> seen_people;
  long max_person = 0;
  Eigen::Index row = 0;
  for (size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& b = blocks[bi];
    const std::set<long> block_cs(b.cs.begin(), b.cs.end());
    for (long c : block_cs) {
      if (seen_cs.count(c)) throw MergeError(fmt::format("cs id {} appears in more than one block", c));
    }
    const std::set<long> block_people(b.personid.begin(), b.personid.end());
    bool collides = false;
    for (long p : block_people) collides = collides || seen_people.count(p) > 0;
    const long shift = collides ? max_person : 0;
    for (int r = 0; r < b.n_rows(); ++r) {
      out.personid.push_back(b.personid[r] + shift);
      out.cs.push_back(b.cs[r]);
      out.choice.push_back(b.choice[r]);
      out.alt.push_back(b.alt[r]);
      out.X.row(row++) = b.X.row(r);
    }
    for (long p : block_people) {
      seen_people.insert(p + shift);
      max_person = std::max(max_person, p + shift);
    }
    seen_cs.insert(block_cs.begin(), block_cs.end());
  }
  return out;
}

void write_long_csv(std::ostream& out, const ChoiceDataLong& data) {
  std::vector<std::string> header{"personid", "cs", "choice", "alt"};
  header.insert(header.end(), data.column_names.begin(), data.column_names.end());
  csv::write_row(out, header);
  for (int r = 0; r < data.n_rows(); ++r) {
    std::vector<std::string> fields{std::to_string(data.personid[r]), std::to_string(data.cs[r]),
                                    std::to_string(data.choice[r]), std::to_string(data.alt[r])};
    for (Eigen::Index c = 0; c < data.X.cols(); ++c) fields.push_back(csv::format_number(data.X(r, c)));
    csv::write_row(out, fields);
  }
}

void write_long_csv(const std::filesystem::path& path, const ChoiceDataLong& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(fmt::format("cannot write '{}'", path.string()));
  write_long_csv(out, data);
}

ChoiceDataLong read_long_csv(std::istream& in, const std::string& source) {
  const csv::Table t = csv::read(in, source);
  const char* required[] = {"personid", "cs", "choice", "alt"};
  for (int i = 0; i < 4; ++i) {
    if (t.header.size() <= static_cast<size_t>(i) || t.header[i] != required[i]) {
      throw FormatError(fmt::format("{}: header must start with personid,cs,choice,alt", source));
    }
  }
  ChoiceDataLong d;
  d.column_names.assign(t.header.begin() + 4, t.header.end());
  if (d.column_names.empty()) throw FormatError(fmt::format("{}: no design columns", source));
  d.X.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(d.column_names.size()));
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const int line = t.lines[r];
    d.personid.push_back(csv::parse_int(row[0], source, line));
    d.cs.push_back(csv::parse_int(row[1], source, line));
    const auto choice = csv::parse_int(row[2], source, line);
    if (choice != 0 && choice != 1) throw FormatError(fmt::format("{}:{}: choice must be 0 or 1", source, line));
    d.choice.push_back(static_cast<int>(choice));
    d.alt.push_back(static_cast<int>(csv::parse_int(row[3], source, line)));
    for (size_t c = 0; c < d.column_names.size(); ++c) {
      d.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = csv::parse_double(row[c + 4], source, line);
    }
  }
  try {
    d.validate();
  } catch (const DataError& e) {
    throw FormatError(fmt::format("{}: {}", source, e.what()));
  }
  return d;
}

ChoiceDataLong read_long_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open long data '{}'", path.string()));
  return read_long_csv(in, path.string());
}

}  // namespace dce
