#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dce/coding.hpp"
#include "dce/design.hpp"
#include "dce/error.hpp"

namespace httplib {
class Server;
}

namespace dce {

struct SocioQuestion {
  std::string id;
  std::string prompt;
  std::string type = "text";  // text | number | choice
  std::vector<std::string> options;
  bool required = true;
};

struct AlternativeView {
  std::string label;                // "Option 1"
  std::vector<std::string> levels;  // one label per attribute, blank for the opt-out
  bool opt_out = false;
};

struct ChoiceSetView {
  int set_id = 0;
  std::vector<AlternativeView> alternatives;
};

struct SurveyBlock {
  int id = 1;
  std::vector<ChoiceSetView> sets;
};

struct SurveyDefinition {
  std::string title = "Discrete choice survey";
  std::string intro_text;
  int min_intro_seconds = 60;
  bool shuffle = true;
  int n_alts = 3;
  std::vector<std::string> attribute_names;
  std::vector<SurveyBlock> blocks;
  std::vector<SocioQuestion> socio_questions;

  void validate() const;
  // Block holding the set, or 0 when no block does.
  int block_of_set(int set_id) const;
  const SurveyBlock* find_block(int block_id) const;
};

// Text parts of a survey (intro, socio questions) read from JSON:
// {"title", "intro_text", "min_intro_seconds", "shuffle",
//  "socio_questions": [{"id", "prompt", "type", "options", "required"}]}
SurveyDefinition parse_survey_text(const std::string& json_text);

// Renders every choice set of `design` as level labels, split into the
// spec's blocks. The opt-out shows blank levels and a zero price.
SurveyDefinition build_survey_definition(const ExperimentSpec& spec, const DesignMatrix& design,
                                         SurveyDefinition text = {});

std::string survey_to_json(const SurveyDefinition& survey);

struct SessionRecord {
  std::string id;
  int block = 0;
  std::int64_t intro_served_at_ms = 0;
  std::optional<std::int64_t> survey_started_at_ms;
  std::vector<int> presentation_order;  // set ids in the order shown
  std::map<int, std::string> responses;  // set id -> option letter
  std::map<std::string, std::string> socio;
  bool completed = false;
  std::uint64_t completion_seq = 0;
};

// Machine-readable service failure: `code` is stable, `http_status` is the
// status the HTTP layer returns.
class ServiceError : public Error {
 public:
  ServiceError(std::string code, int http_status, const std::string& message, int retry_after = 0)
      : Error(message), code_(std::move(code)), http_status_(http_status), retry_after_(retry_after) {}

  const std::string& code() const { return code_; }
  int http_status() const { return http_status_; }
  int retry_after() const { return retry_after_; }

 private:
  std::string code_;
  int http_status_;
  int retry_after_;
};

// Uniform choice among `block_ids`.
int assign_block(const std::vector<int>& block_ids, std::mt19937_64& rng);

struct GateDecision {
  bool allowed = false;
  int retry_after_seconds = 0;
};

GateDecision gate_intro(const SessionRecord& session, int min_intro_seconds, std::int64_t now_ms);

// Wall clock in milliseconds since the epoch; injectable for tests.
using Clock = std::function<std::int64_t()>;
std::int64_t system_clock_ms();

struct ServiceOptions {
  // Directory for the append-only event log; empty keeps everything in memory.
  std::filesystem::path data_dir;
  std::optional<std::uint64_t> seed;  // block assignment and session tokens
  Clock clock = system_clock_ms;
};

class SurveyService {
 public:
  static constexpr const char* kLogFile = "events.ndjson";

  SurveyService(SurveyDefinition survey, ServiceOptions options = {});

  const SurveyDefinition& survey() const { return survey_; }

  SessionRecord create_session();
  std::optional<SessionRecord> session(const std::string& id) const;
  std::vector<SessionRecord> sessions() const;

  GateDecision intro_status(const std::string& id) const;
  // Throws ServiceError INTRO_GATED with the remaining seconds.
  void start_survey(const std::string& id);
  void record_response(const std::string& id, int set_id, const std::string& option);
  void record_socio(const std::string& id, const std::map<std::string, std::string>& answers);
  // Throws ServiceError INCOMPLETE listing the missing set ids / questions.
  void complete(const std::string& id);

  // Sets still unanswered, in presentation order.
  std::vector<int> missing_sets(const std::string& id) const;

  // Completed sessions of the block, ordered by completion; personid is the
  // 1-based rank in that order.
  std::string export_wide(int block_id) const;
  std::string export_socio(int block_id) const;

 private:
  void replay();
  void apply(const std::string& line, bool from_log);
  void append(const std::string& line);
  SessionRecord& require(const std::string& id);
  const SessionRecord& require(const std::string& id) const;
  std::string new_token();

  SurveyDefinition survey_;
  ServiceOptions options_;
  mutable std::mutex mutex_;
  std::ofstream log_;
  std::mt19937_64 assign_rng_;
  std::mt19937_64 token_rng_;
  std::map<std::string, SessionRecord> sessions_;
  std::uint64_t completions_ = 0;
};

// Mounts the JSON API under /api (and the UI directory at / when given).
void register_routes(httplib::Server& server, SurveyService& service, const std::string& admin_token,
                     const std::filesystem::path& ui_dir = {});

}  // namespace dce
