#include "dce/service.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include <fmt/format.h>

#include "dce/csv.hpp"
#include "dce/pipeline.hpp"
#include "json.hpp"

namespace dce {

using nlohmann::json;

namespace {

std::string option_letter(int alt) { return std::string(1, static_cast<char>('A' + alt - 1)); }

json question_to_json(const SocioQuestion& q) {
  return json{{"id", q.id}, {"prompt", q.prompt}, {"type", q.type}, {"options", q.options}, {"required", q.required}};
}

}  // namespace

void SurveyDefinition::validate() const {
  if (n_alts < 2) throw DomainError("survey needs at least two alternatives per set");
  if (min_intro_seconds < 0) throw DomainError("min_intro_seconds must be non-negative");
  if (blocks.empty()) throw DomainError("survey has no blocks");
  std::vector<int> seen;
  for (const auto& block : blocks) {
    if (block.sets.empty()) throw DomainError(fmt::format("block {} has no choice sets", block.id));
    for (const auto& set : block.sets) {
      if (std::find(seen.begin(), seen.end(), set.set_id) != seen.end()) {
        throw DomainError(fmt::format("set {} appears in more than one place", set.set_id));
      }
      seen.push_back(set.set_id);
      if (static_cast<int>(set.alternatives.size()) != n_alts) {
        throw DomainError(fmt::format("set {} does not have {} alternatives", set.set_id, n_alts));
      }
    }
  }
  std::vector<std::string> ids;
  for (const auto& q : socio_questions) {
    if (q.id.empty()) throw DomainError("socio question without an id");
    if (std::find(ids.begin(), ids.end(), q.id) != ids.end()) throw DomainError("duplicate socio question " + q.id);
    if (q.id == "personid" || q.id == "block") throw DomainError("reserved socio question id " + q.id);
    ids.push_back(q.id);
  }
}

int SurveyDefinition::block_of_set(int set_id) const {
  for (const auto& block : blocks) {
    for (const auto& set : block.sets) {
      if (set.set_id == set_id) return block.id;
    }
  }
  return 0;
}

const SurveyBlock* SurveyDefinition::find_block(int block_id) const {
  for (const auto& block : blocks) {
    if (block.id == block_id) return &block;
  }
  return nullptr;
}

SurveyDefinition parse_survey_text(const std::string& json_text) {
  SurveyDefinition out;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("survey config: ") + e.what());
  }
  try {
    out.title = j.value("title", out.title);
    out.intro_text = j.value("intro_text", out.intro_text);
    out.min_intro_seconds = j.value("min_intro_seconds", out.min_intro_seconds);
    out.shuffle = j.value("shuffle", out.shuffle);
    for (const auto& q : j.value("socio_questions", json::array())) {
      SocioQuestion sq;
      sq.id = q.at("id").get<std::string>();
      sq.prompt = q.value("prompt", sq.id);
      sq.type = q.value("type", sq.type);
      sq.options = q.value("options", std::vector<std::string>{});
      sq.required = q.value("required", true);
      if (sq.type != "text" && sq.type != "number" && sq.type != "choice") {
        throw FormatError(fmt::format("survey config: question {} has unknown type {}", sq.id, sq.type));
      }
      if (sq.type == "choice" && sq.options.empty()) {
        throw FormatError(fmt::format("survey config: choice question {} has no options", sq.id));
      }
      out.socio_questions.push_back(std::move(sq));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("survey config: ") + e.what());
  }
  if (out.min_intro_seconds < 0) throw FormatError("survey config: min_intro_seconds must be non-negative");
  return out;
}

SurveyDefinition build_survey_definition(const ExperimentSpec& spec, const DesignMatrix& design,
                                         SurveyDefinition text) {
  spec.validate();
  design.validate();
  if (design.n_alts != spec.n_alts || design.no_choice != spec.no_choice) {
    throw DomainError("design does not match the experiment spec");
  }
  SurveyDefinition out = std::move(text);
  out.n_alts = spec.n_alts;
  out.attribute_names.clear();
  for (const auto& a : spec.attributes) out.attribute_names.push_back(a.name);
  out.blocks.clear();

  const auto blocks = block_design(design, spec.n_blocks);
  const int price = spec.price_attribute();
  for (size_t b = 0; b < blocks.size(); ++b) {
    SurveyBlock block;
    block.id = static_cast<int>(b) + 1;
    const auto profiles = design_profiles(blocks[b], spec);
    for (int s = 0; s < blocks[b].n_sets(); ++s) {
      ChoiceSetView view;
      view.set_id = blocks[b].set_id_at(s);
      for (size_t alt = 0; alt < profiles[s].size(); ++alt) {
        AlternativeView av;
        av.label = fmt::format("Option {}", alt + 1);
        for (int a = 0; a < spec.n_attributes(); ++a) {
          av.levels.push_back(spec.attributes[a].levels[profiles[s][alt].levels[a] - 1]);
        }
        view.alternatives.push_back(std::move(av));
      }
      if (spec.no_choice) {
        AlternativeView none;
        none.label = "No choice";
        none.opt_out = true;
        none.levels.assign(spec.n_attributes(), "");
        if (price >= 0) {
          const auto& unit = spec.attributes[price].unit;
          none.levels[price] = "0" + unit;
        }
        view.alternatives.push_back(std::move(none));
      }
      block.sets.push_back(std::move(view));
    }
    out.blocks.push_back(std::move(block));
  }
  out.validate();
  return out;
}

namespace {

json block_to_json(const SurveyBlock& block, const std::vector<int>& order) {
  json sets = json::array();
  auto emit = [&](const ChoiceSetView& set) {
    json alts = json::array();
    for (size_t a = 0; a < set.alternatives.size(); ++a) {
      const auto& av = set.alternatives[a];
      alts.push_back(json{{"option", option_letter(static_cast<int>(a) + 1)},
                          {"label", av.label},
                          {"levels", av.levels},
                          {"opt_out", av.opt_out}});
    }
    sets.push_back(json{{"set_id", set.set_id}, {"alternatives", alts}});
  };
  if (order.empty()) {
    for (const auto& set : block.sets) emit(set);
  } else {
    for (int id : order) {
      for (const auto& set : block.sets) {
        if (set.set_id == id) emit(set);
      }
    }
  }
  return json{{"block", block.id}, {"sets", sets}};
}

}  // namespace

std::string survey_to_json(const SurveyDefinition& survey) {
  json blocks = json::array();
  for (const auto& block : survey.blocks) blocks.push_back(block_to_json(block, {}));
  json questions = json::array();
  for (const auto& q : survey.socio_questions) questions.push_back(question_to_json(q));
  json j{{"title", survey.title},
         {"intro_text", survey.intro_text},
         {"min_intro_seconds", survey.min_intro_seconds},
         {"shuffle", survey.shuffle},
         {"n_alts", survey.n_alts},
         {"attributes", survey.attribute_names},
         {"blocks", blocks},
         {"socio_questions", questions}};
  return j.dump(2);
}

int assign_block(const std::vector<int>& block_ids, std::mt19937_64& rng) {
  if (block_ids.empty()) throw DomainError("no blocks to assign");
  std::uniform_int_distribution<size_t> pick(0, block_ids.size() - 1);
  return block_ids[pick(rng)];
}

GateDecision gate_intro(const SessionRecord& session, int min_intro_seconds, std::int64_t now_ms) {
  const std::int64_t required = static_cast<std::int64_t>(min_intro_seconds) * 1000;
  const std::int64_t elapsed = now_ms - session.intro_served_at_ms;
  if (elapsed >= required) return {true, 0};
  const std::int64_t remaining = required - elapsed;
  return {false, static_cast<int>((remaining + 999) / 1000)};
}

std::int64_t system_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

SurveyService::SurveyService(SurveyDefinition survey, ServiceOptions options)
    : survey_(std::move(survey)), options_(std::move(options)) {
  survey_.validate();
  if (!options_.clock) options_.clock = system_clock_ms;
  if (options_.seed) {
    assign_rng_.seed(*options_.seed);
    token_rng_.seed(*options_.seed ^ 0x9e3779b97f4a7c15ULL);
  } else {
    std::random_device rd;
    std::seed_seq a{rd(), rd(), rd(), rd()};
    std::seed_seq t{rd(), rd(), rd(), rd()};
    assign_rng_.seed(a);
    token_rng_.seed(t);
  }
  if (!options_.data_dir.empty()) {
    std::filesystem::create_directories(options_.data_dir);
    replay();
    log_.open(options_.data_dir / kLogFile, std::ios::app | std::ios::binary);
    if (!log_) throw DataError("cannot open event log in " + options_.data_dir.string());
  }
}

void SurveyService::replay() {
  const auto path = options_.data_dir / kLogFile;
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      apply(line, true);
    } catch (const json::exception& e) {
      // A torn final line from a crash mid-write is dropped; anything else is corruption.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw DataError(fmt::format("{}:{}: unreadable event: {}", path.string(), number, e.what()));
    }
  }
}

void SurveyService::append(const std::string& line) {
  if (!log_.is_open()) return;
  log_ << line << '\n';
  log_.flush();
  if (!log_) throw DataError("event log write failed");
}

void SurveyService::apply(const std::string& line, bool from_log) {
  const json e = json::parse(line);
  const std::string type = e.at("type").get<std::string>();
  const std::string id = e.at("id").get<std::string>();
  if (type == "session") {
    SessionRecord s;
    s.id = id;
    s.block = e.at("block").get<int>();
    s.intro_served_at_ms = e.at("t").get<std::int64_t>();
    s.presentation_order = e.at("order").get<std::vector<int>>();
    sessions_[id] = std::move(s);
  } else if (type == "start") {
    auto& s = require(id);
    if (!s.survey_started_at_ms) s.survey_started_at_ms = e.at("t").get<std::int64_t>();
  } else if (type == "response") {
    require(id).responses[e.at("set").get<int>()] = e.at("option").get<std::string>();
  } else if (type == "socio") {
    auto& s = require(id);
    for (const auto& [k, v] : e.at("answers").items()) s.socio[k] = v.get<std::string>();
  } else if (type == "complete") {
    auto& s = require(id);
    if (!s.completed) {
      s.completed = true;
      s.completion_seq = ++completions_;
    }
  } else if (from_log) {
    throw DataError("unknown event type " + type);
  }
  if (!from_log) append(line);
}

SessionRecord& SurveyService::require(const std::string& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError("UNKNOWN_SESSION", 404, "unknown session " + id);
  return it->second;
}

const SessionRecord& SurveyService::require(const std::string& id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError("UNKNOWN_SESSION", 404, "unknown session " + id);
  return it->second;
}

std::string SurveyService::new_token() {
  for (;;) {
    std::string token = fmt::format("{:016x}{:016x}", token_rng_(), token_rng_());
    if (!sessions_.count(token)) return token;
  }
}

SessionRecord SurveyService::create_session() {
  std::lock_guard lock(mutex_);
  std::vector<int> ids;
  for (const auto& b : survey_.blocks) ids.push_back(b.id);
  const int block = assign_block(ids, assign_rng_);
  std::vector<int> order;
  for (const auto& set : survey_.find_block(block)->sets) order.push_back(set.set_id);
  if (survey_.shuffle) std::shuffle(order.begin(), order.end(), assign_rng_);
  const std::string id = new_token();
  json e{{"type", "session"}, {"id", id}, {"block", block}, {"t", options_.clock()}, {"order", order}};
  apply(e.dump(), false);
  return sessions_.at(id);
}

std::optional<SessionRecord> SurveyService::session(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

std::vector<SessionRecord> SurveyService::sessions() const {
  std::lock_guard lock(mutex_);
  std::vector<SessionRecord> out;
  for (const auto& [id, s] : sessions_) out.push_back(s);
  return out;
}

GateDecision SurveyService::intro_status(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto& s = require(id);
  if (s.survey_started_at_ms) return {true, 0};
  return gate_intro(s, survey_.min_intro_seconds, options_.clock());
}

void SurveyService::start_survey(const std::string& id) {
  std::lock_guard lock(mutex_);
  const auto& s = require(id);
  if (s.survey_started_at_ms) return;
  const auto now = options_.clock();
  const auto gate = gate_intro(s, survey_.min_intro_seconds, now);
  if (!gate.allowed) {
    throw ServiceError("INTRO_GATED", 429,
                       fmt::format("introduction must be shown for {} seconds", survey_.min_intro_seconds),
                       gate.retry_after_seconds);
  }
  apply(json{{"type", "start"}, {"id", id}, {"t", now}}.dump(), false);
}

void SurveyService::record_response(const std::string& id, int set_id, const std::string& option) {
  std::lock_guard lock(mutex_);
  const auto& s = require(id);
  if (s.completed) throw ServiceError("ALREADY_COMPLETED", 409, "session already completed");
  if (!s.survey_started_at_ms) throw ServiceError("SURVEY_NOT_STARTED", 409, "survey not started");
  const int owner = survey_.block_of_set(set_id);
  if (owner == 0) throw ServiceError("UNKNOWN_SET", 422, fmt::format("no choice set {}", set_id));
  if (owner != s.block) {
    throw ServiceError("BLOCK_MISMATCH", 422,
                       fmt::format("set {} belongs to block {}, session has block {}", set_id, owner, s.block));
  }
  std::string letter = csv::trim(option);
  for (auto& c : letter) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (letter.size() != 1 || letter[0] < 'A' || letter[0] >= 'A' + survey_.n_alts) {
    throw ServiceError("INVALID_OPTION", 422,
                       fmt::format("option must be one of A..{}", option_letter(survey_.n_alts)));
  }
  auto it = s.responses.find(set_id);
  if (it != s.responses.end() && it->second == letter) return;  // resend of the same answer
  apply(json{{"type", "response"}, {"id", id}, {"set", set_id}, {"option", letter}, {"t", options_.clock()}}.dump(),
        false);
}

void SurveyService::record_socio(const std::string& id, const std::map<std::string, std::string>& answers) {
  std::lock_guard lock(mutex_);
  const auto& s = require(id);
  if (s.completed) throw ServiceError("ALREADY_COMPLETED", 409, "session already completed");
  for (const auto& [key, value] : answers) {
    auto q = std::find_if(survey_.socio_questions.begin(), survey_.socio_questions.end(),
                          [&](const SocioQuestion& sq) { return sq.id == key; });
    if (q == survey_.socio_questions.end()) throw ServiceError("UNKNOWN_QUESTION", 422, "unknown question " + key);
    if (q->type == "choice" && std::find(q->options.begin(), q->options.end(), value) == q->options.end()) {
      throw ServiceError("INVALID_ANSWER", 422, fmt::format("{} is not an option of {}", value, key));
    }
    if (q->type == "number") {
      try {
        (void)csv::parse_double(value, key, 0);
      } catch (const FormatError&) {
        throw ServiceError("INVALID_ANSWER", 422, fmt::format("{} expects a number", key));
      }
    }
  }
  apply(json{{"type", "socio"}, {"id", id}, {"answers", answers}}.dump(), false);
}

std::vector<int> SurveyService::missing_sets(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto& s = require(id);
  std::vector<int> out;
  for (int set : s.presentation_order) {
    if (!s.responses.count(set)) out.push_back(set);
  }
  return out;
}

void SurveyService::complete(const std::string& id) {
  std::lock_guard lock(mutex_);
  const auto& s = require(id);
  if (s.completed) return;
  if (!s.survey_started_at_ms) throw ServiceError("SURVEY_NOT_STARTED", 409, "survey not started");
  std::vector<std::string> missing;
  for (int set : s.presentation_order) {
    if (!s.responses.count(set)) missing.push_back(std::to_string(set));
  }
  for (const auto& q : survey_.socio_questions) {
    if (q.required && !s.socio.count(q.id)) missing.push_back(q.id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ",") + m;
    throw ServiceError("INCOMPLETE", 409, "unanswered: " + list);
  }
  apply(json{{"type", "complete"}, {"id", id}, {"t", options_.clock()}}.dump(), false);
}

namespace {

std::vector<const SessionRecord*> completed_in_block(const std::map<std::string, SessionRecord>& sessions,
                                                     int block) {
  std::vector<const SessionRecord*> out;
  for (const auto& [id, s] : sessions) {
    if (s.completed && s.block == block) out.push_back(&s);
  }
  std::sort(out.begin(), out.end(),
            [](const SessionRecord* a, const SessionRecord* b) { return a->completion_seq < b->completion_seq; });
  return out;
}

}  // namespace

std::string SurveyService::export_wide(int block_id) const {
  std::lock_guard lock(mutex_);
  const auto* block = survey_.find_block(block_id);
  if (!block) throw ServiceError("UNKNOWN_BLOCK", 404, fmt::format("no block {}", block_id));
  std::vector<int> set_ids;
  for (const auto& set : block->sets) set_ids.push_back(set.set_id);
  std::sort(set_ids.begin(), set_ids.end());
  WideResponses wide;
  wide.set_ids = set_ids;
  long personid = 0;
  for (const auto* s : completed_in_block(sessions_, block_id)) {
    WideResponses::Row row{++personid, block_id, {}};
    for (int id : set_ids) row.choices.push_back(s->responses.at(id));
    wide.rows.push_back(std::move(row));
  }
  std::ostringstream out;
  write_wide_csv(out, wide);
  return out.str();
}

std::string SurveyService::export_socio(int block_id) const {
  std::lock_guard lock(mutex_);
  if (!survey_.find_block(block_id)) throw ServiceError("UNKNOWN_BLOCK", 404, fmt::format("no block {}", block_id));
  std::ostringstream out;
  std::vector<std::string> header{"personid", "block"};
  for (const auto& q : survey_.socio_questions) header.push_back(q.id);
  csv::write_row(out, header);
  long personid = 0;
  for (const auto* s : completed_in_block(sessions_, block_id)) {
    std::vector<std::string> row{std::to_string(++personid), std::to_string(block_id)};
    for (const auto& q : survey_.socio_questions) {
      auto it = s->socio.find(q.id);
      row.push_back(it == s->socio.end() ? "" : it->second);
    }
    csv::write_row(out, row);
  }
  return out.str();
}

}  // namespace dce
