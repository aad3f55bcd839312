#include <string>

#include <fmt/format.h>

#include "dce/service.hpp"
#include "httplib.h"
#include "json.hpp"

namespace dce {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const ServiceError& e) {
  json body{{"error", e.code()}, {"message", e.what()}};
  if (e.retry_after() > 0) {
    body["retry_after"] = e.retry_after();
    res.set_header("Retry-After", std::to_string(e.retry_after()));
  }
  send_json(res, e.http_status(), body);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw ServiceError("BAD_REQUEST", 400, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw ServiceError("BAD_REQUEST", 400, std::string("malformed JSON: ") + e.what());
  }
}

// Runs `fn`, mapping exceptions to the JSON error shape.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e);
    } catch (const json::exception& e) {
      send_error(res, ServiceError("BAD_REQUEST", 400, e.what()));
    } catch (const Error& e) {
      send_error(res, ServiceError("BAD_REQUEST", 400, e.what()));
    } catch (const std::exception& e) {
      send_error(res, ServiceError("INTERNAL", 500, e.what()));
    }
  };
}

json session_json(const SurveyService& service, const SessionRecord& s) {
  const auto gate = service.intro_status(s.id);
  json responses = json::object();
  for (const auto& [set, option] : s.responses) responses[std::to_string(set)] = option;
  return json{{"session", s.id},
              {"block", s.block},
              {"started", s.survey_started_at_ms.has_value()},
              {"completed", s.completed},
              {"retry_after", gate.retry_after_seconds},
              {"responses", responses},
              {"socio", s.socio},
              {"missing", service.missing_sets(s.id)}};
}

bool authorized(const httplib::Request& req, const std::string& token) {
  if (token.empty()) return false;
  const auto auth = req.get_header_value("Authorization");
  return auth == "Bearer " + token || req.get_header_value("X-Admin-Token") == token;
}

int block_param(const httplib::Request& req) {
  if (!req.has_param("block")) throw ServiceError("BAD_REQUEST", 400, "missing block parameter");
  const auto text = req.get_param_value("block");
  try {
    size_t used = 0;
    const int block = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return block;
  } catch (const std::exception&) {
    throw ServiceError("BAD_REQUEST", 400, "block must be an integer");
  }
}

}  // namespace

void register_routes(httplib::Server& server, SurveyService& service, const std::string& admin_token,
                     const std::filesystem::path& ui_dir) {
  const std::string sid = "/api/sessions/([0-9a-f]+)";

  server.Get("/api/survey", guarded([&service](const httplib::Request&, httplib::Response& res) {
               res.set_content(survey_to_json(service.survey()), "application/json");
             }));

  server.Post("/api/sessions", guarded([&service](const httplib::Request&, httplib::Response& res) {
                const auto s = service.create_session();
                const auto& survey = service.survey();
                send_json(res, 201,
                          json{{"session", s.id},
                               {"block", s.block},
                               {"title", survey.title},
                               {"intro_text", survey.intro_text},
                               {"min_intro_seconds", survey.min_intro_seconds}});
              }));

  server.Get(sid, guarded([&service](const httplib::Request& req, httplib::Response& res) {
               const auto s = service.session(req.matches[1]);
               if (!s) throw ServiceError("UNKNOWN_SESSION", 404, "unknown session");
               send_json(res, 200, session_json(service, *s));
             }));

  server.Get(sid + "/intro", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               const auto gate = service.intro_status(req.matches[1]);
               const auto& survey = service.survey();
               send_json(res, 200,
                         json{{"title", survey.title},
                              {"intro_text", survey.intro_text},
                              {"min_intro_seconds", survey.min_intro_seconds},
                              {"can_start", gate.allowed},
                              {"retry_after", gate.retry_after_seconds}});
             }));

  server.Post(sid + "/start", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                service.start_survey(req.matches[1]);
                send_json(res, 200, json{{"started", true}});
              }));

  server.Get(sid + "/block", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               const auto s = service.session(req.matches[1]);
               if (!s) throw ServiceError("UNKNOWN_SESSION", 404, "unknown session");
               if (!s->survey_started_at_ms) throw ServiceError("SURVEY_NOT_STARTED", 409, "survey not started");
               const auto& survey = service.survey();
               const auto* block = survey.find_block(s->block);
               json sets = json::array();
               for (int id : s->presentation_order) {
                 for (const auto& set : block->sets) {
                   if (set.set_id != id) continue;
                   json alts = json::array();
                   for (size_t a = 0; a < set.alternatives.size(); ++a) {
                     const auto& av = set.alternatives[a];
                     alts.push_back(json{{"option", std::string(1, static_cast<char>('A' + a))},
                                         {"label", av.label},
                                         {"levels", av.levels},
                                         {"opt_out", av.opt_out}});
                   }
                   sets.push_back(json{{"set_id", set.set_id}, {"alternatives", alts}});
                 }
               }
               json questions = json::array();
               for (const auto& q : survey.socio_questions) {
                 questions.push_back(json{{"id", q.id},
                                          {"prompt", q.prompt},
                                          {"type", q.type},
                                          {"options", q.options},
                                          {"required", q.required}});
               }
               json responses = json::object();
               for (const auto& [set, option] : s->responses) responses[std::to_string(set)] = option;
               send_json(res, 200,
                         json{{"session", s->id},
                              {"block", s->block},
                              {"attributes", survey.attribute_names},
                              {"sets", sets},
                              {"responses", responses},
                              {"socio_questions", questions}});
             }));

  server.Post(sid + "/responses", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                if (!body.contains("set_id") || !body["set_id"].is_number_integer()) {
                  throw ServiceError("BAD_REQUEST", 400, "set_id must be an integer");
                }
                if (!body.contains("option") || !body["option"].is_string()) {
                  throw ServiceError("BAD_REQUEST", 400, "option must be a string");
                }
                const int set_id = body["set_id"].get<int>();
                service.record_response(req.matches[1], set_id, body["option"].get<std::string>());
                const auto s = service.session(req.matches[1]);
                send_json(res, 200,
                          json{{"ok", true}, {"set_id", set_id}, {"option", s->responses.at(set_id)},
                               {"remaining", service.missing_sets(s->id).size()}});
              }));

  server.Post(sid + "/socio", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const json body = parse_body(req);
                if (!body.contains("answers") || !body["answers"].is_object()) {
                  throw ServiceError("BAD_REQUEST", 400, "answers must be an object");
                }
                std::map<std::string, std::string> answers;
                for (const auto& [k, v] : body["answers"].items()) {
                  answers[k] = v.is_string() ? v.get<std::string>() : v.dump();
                }
                service.record_socio(req.matches[1], answers);
                send_json(res, 200, json{{"ok", true}});
              }));

  server.Post(sid + "/complete", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                service.complete(req.matches[1]);
                send_json(res, 200, json{{"ok", true}, {"completed", true}});
              }));

  server.Get("/api/admin/export", guarded([&service, admin_token](const httplib::Request& req,
                                                                  httplib::Response& res) {
               if (!authorized(req, admin_token)) throw ServiceError("UNAUTHORIZED", 401, "admin token required");
               const int block = block_param(req);
               const bool socio = req.has_param("kind") && req.get_param_value("kind") == "socio";
               res.status = 200;
               res.set_content(socio ? service.export_socio(block) : service.export_wide(block), "text/csv");
             }));

  if (!ui_dir.empty()) {
    if (!server.set_mount_point("/", ui_dir.string())) {
      throw DataError("cannot serve UI directory " + ui_dir.string());
    }
  }
}

}  // namespace dce
