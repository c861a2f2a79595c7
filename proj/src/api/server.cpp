#include <httplib.h>

#include <algorithm>
#include <charconv>

#include "botverse/api.hpp"
#include "botverse/errors.hpp"

namespace botverse {

namespace {

constexpr std::size_t kDefaultLimit = 100;
constexpr std::size_t kMaxLimit = 1000;

struct HttpError {
  int status;
  std::string code;
  std::string detail;
};

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Conflict:
    case ErrorCode::DuplicateNarrative: return 409;
    case ErrorCode::NotRunning: return 503;
    case ErrorCode::UnknownNarrative: return 404;
    case ErrorCode::ConnectionFailed:
    case ErrorCode::Io:
    case ErrorCode::IntegrityViolation: return 500;
    default: return 400;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& detail) {
  send_json(res, status, json{{"error", code}, {"detail", detail}});
}

std::optional<std::int64_t> int_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const std::string v = req.get_param_value(name);
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw HttpError{400, "InvalidParameter", std::string(name) + " must be an integer"};
  return out;
}

std::size_t limit_param(const httplib::Request& req) {
  const auto v = int_param(req, "limit");
  if (!v) return kDefaultLimit;
  if (*v <= 0 || static_cast<std::size_t>(*v) > kMaxLimit)
    throw HttpError{400, "InvalidParameter", "limit must be in 1.." + std::to_string(kMaxLimit)};
  return static_cast<std::size_t>(*v);
}

json parse_body(const httplib::Request& req) {
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw HttpError{400, "MalformedJson", "request body is not valid JSON"};
  return j;
}

}  // namespace

std::pair<std::string, int> parse_bind(const std::string& bind) {
  std::string host = "127.0.0.1";
  std::string port = bind;
  if (auto colon = bind.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = bind.substr(0, colon);
    port = bind.substr(colon + 1);
  }
  int p = -1;
  auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), p);
  if (ec != std::errc() || ptr != port.data() + port.size() || p < 0 || p > 65535)
    throw Error(ErrorCode::OutOfRange, "bad bind address '" + bind + "'");
  return {host, p};
}

struct ApiServer::Impl {
  Runner& runner;
  ApiConfig config;
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> stopping{false};

  Impl(Runner& r, ApiConfig c) : runner(r), config(std::move(c)) {}

  std::shared_ptr<const Snapshot> ready_snapshot() {
    if (!runner.ready()) throw HttpError{503, "NotReady", "engine is not ready"};
    return runner.snapshot();
  }

  // Wraps a handler with the shared error mapping.
  template <typename F>
  httplib::Server::Handler wrap(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status, e.code, e.detail);
      } catch (const Error& e) {
        send_error(res, status_for(e.code()), std::string(to_string(e.code())), e.detail());
      } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
      }
    };
  }

  void check_command(const ControlCommand& cmd, const Snapshot& snap) {
    if (cmd.kind == ControlCommand::Kind::inject_narrative) {
      if (snap.narratives.contains(cmd.narrative_id) && !cmd.reusable)
        throw HttpError{409, "DuplicateNarrative", cmd.narrative_id};
      if (cmd.assignees.archetype) {
        const std::string arch(to_string(*cmd.assignees.archetype));
        const bool any = std::any_of(snap.agents.begin(), snap.agents.end(),
                                     [&](const json& a) { return a.at("archetype") == arch; });
        if (!any) throw HttpError{400, "NoAssignees", "no " + arch + " agents"};
      } else {
        for (const auto& id : cmd.assignees.agents)
          if (!snap.agent_detail.count(id.value)) throw HttpError{400, "NoAssignees", "unknown agent " + id.value};
        if (cmd.assignees.agents.empty()) throw HttpError{400, "NoAssignees", "empty assignee list"};
      }
    }
    if (cmd.kind == ControlCommand::Kind::patch_memory_params)
      for (const auto& id : cmd.selector.agents)
        if (!snap.agent_detail.count(id.value)) throw HttpError{404, "UnknownAgent", id.value};
  }

  void routes() {
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      const std::string origin = req.get_header_value("Origin");
      const bool allowed = !origin.empty() && std::any_of(config.cors_origins.begin(), config.cors_origins.end(),
                                                          [&](const std::string& o) { return o == "*" || o == origin; });
      if (allowed) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Vary", "Origin");
      }
      if (req.method == "OPTIONS") {
        if (allowed) {
          res.set_header("Access-Control-Allow-Methods", "GET, POST, PATCH, OPTIONS");
          res.set_header("Access-Control-Allow-Headers", "Content-Type");
        }
        res.status = allowed ? 204 : 403;
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });

    server.Get("/health", wrap([this](const httplib::Request&, httplib::Response& res) {
      json body = {{"ok", !runner.failure()}, {"ready", runner.ready()}, {"status", runner.snapshot()->status}};
      if (auto f = runner.failure()) body["failure"] = *f;
      send_json(res, 200, body);
    }));

    server.Get("/simulation", wrap([this](const httplib::Request&, httplib::Response& res) {
      auto s = ready_snapshot();
      send_json(res, 200,
                json{{"status", s->status},
                     {"clock", s->clock.ms},
                     {"agents", s->agents.size()},
                     {"event_count", s->event_count},
                     {"last_command_id", s->last_command_id},
                     {"log_hash", s->log_hash},
                     {"pacing", to_json(s->pacing)},
                     {"duration", runner.scenario().duration.ms},
                     {"scenario", runner.scenario().name},
                     {"narratives", s->narratives},
                     {"counters", s->counters}});
    }));

    server.Get("/agents", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = ready_snapshot();
      const std::size_t limit = limit_param(req);
      std::size_t offset = 0;
      if (req.has_param("cursor")) {
        const std::string c = req.get_param_value("cursor");
        auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), offset);
        if (ec != std::errc() || p != c.data() + c.size() || offset > s->agents.size())
          throw HttpError{400, "InvalidCursor", c};
      }
      const std::size_t end = std::min(s->agents.size(), offset + limit);
      json page = json::array();
      for (std::size_t i = offset; i < end; ++i) page.push_back(s->agents[i]);
      send_json(res, 200,
                json{{"agents", page},
                     {"total", s->agents.size()},
                     {"next_cursor", end < s->agents.size() ? json(std::to_string(end)) : json(nullptr)}});
    }));

    server.Get("/agents/:id", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = ready_snapshot();
      auto it = s->agent_detail.find(req.path_params.at("id"));
      if (it == s->agent_detail.end()) throw HttpError{404, "UnknownAgent", req.path_params.at("id")};
      send_json(res, 200, it->second);
    }));

    server.Patch("/agents/:id/memory_params", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = ready_snapshot();
      const std::string id = req.path_params.at("id");
      auto it = s->memory_params.find(id);
      if (it == s->memory_params.end()) throw HttpError{404, "UnknownAgent", id};
      const json patch = parse_body(req);
      if (!patch.is_object() || patch.empty()) throw HttpError{400, "InvalidCommand", "expected a non-empty object"};
      const MemoryParams next = patched(it->second, patch);
      ControlCommand cmd;
      cmd.kind = ControlCommand::Kind::patch_memory_params;
      cmd.selector.agents.push_back(AgentId{id});
      cmd.memory_patch = patch;
      const auto command_id = runner.submit(cmd);
      send_json(res, 202, json{{"command_id", command_id}, {"accepted", true}, {"memory_params", to_json(next)}});
    }));

    server.Get("/posts", wrap([this](const httplib::Request& req, httplib::Response& res) {
      ready_snapshot();
      TimelineFilter f;
      if (auto v = int_param(req, "since")) f.since = VirtualTime{*v};
      if (auto v = int_param(req, "until")) f.until = VirtualTime{*v};
      if (req.has_param("narrative")) f.narrative = req.get_param_value("narrative");
      if (req.has_param("author")) f.author = AgentId{req.get_param_value("author")};
      std::optional<std::string> cursor;
      if (req.has_param("cursor")) cursor = req.get_param_value("cursor");
      const auto page = runner.store().get_timeline(f, limit_param(req), cursor);
      json posts = json::array();
      for (const auto& p : page.posts) posts.push_back(to_json(p));
      send_json(res, 200,
                json{{"posts", posts}, {"next_cursor", page.next_cursor ? json(*page.next_cursor) : json(nullptr)}});
    }));

    server.Get("/posts/:id", wrap([this](const httplib::Request& req, httplib::Response& res) {
      ready_snapshot();
      auto p = runner.store().get_post(req.path_params.at("id"));
      if (!p) throw HttpError{404, "UnknownPost", req.path_params.at("id")};
      send_json(res, 200, to_json(*p));
    }));

    server.Get("/graph", wrap([this](const httplib::Request& req, httplib::Response& res) {
      ready_snapshot();
      std::optional<VirtualTime> since;
      if (auto v = int_param(req, "since")) since = VirtualTime{*v};
      json edges = json::array();
      std::map<std::string, std::string> author_cache;
      for (const auto& i : runner.store().interactions(since)) {
        auto it = author_cache.find(i.target);
        if (it == author_cache.end()) {
          auto p = runner.store().get_post(i.target);
          it = author_cache.emplace(i.target, p ? p->author_name() : std::string()).first;
        }
        json e = {{"source_agent", i.actor.value},
                  {"target_agent", it->second},
                  {"kind", std::string(to_string(i.kind))},
                  {"virtual_time_ms", i.at.ms},
                  {"target_post", i.target}};
        if (i.produced_post) e["produced_post"] = *i.produced_post;
        edges.push_back(std::move(e));
      }
      send_json(res, 200, json{{"edges", edges}});
    }));

    server.Get("/ingestion/stats", wrap([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, ready_snapshot()->ingestion);
    }));

    server.Post("/control", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto s = ready_snapshot();
      const ControlCommand cmd = control_command_from_json(parse_body(req));
      check_command(cmd, *s);
      const auto id = runner.submit(cmd);
      send_json(res, 202, json{{"command_id", id}, {"accepted", true}});
    }));

    server.Get("/stream", wrap([this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t from = 0;
      if (auto v = int_param(req, "from")) {
        if (*v < 0) throw HttpError{400, "InvalidParameter", "from must be >= 0"};
        from = static_cast<std::uint64_t>(*v);
      }
      auto next = std::make_shared<std::uint64_t>(from);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("application/x-ndjson", [this, next](std::size_t, httplib::DataSink& sink) {
        while (!stopping && !runner.stopping()) {
          auto frames = runner.deltas_from(*next, std::chrono::milliseconds(250));
          if (frames.empty()) {
            if (!sink.is_writable()) return false;
            continue;
          }
          std::string chunk;
          for (const auto& f : frames) chunk += to_json(f).dump() + "\n";
          if (!sink.write(chunk.data(), chunk.size())) return false;
          *next += frames.size();
          return true;
        }
        sink.done();
        return true;
      });
    }));
  }
};

ApiServer::ApiServer(Runner& runner, ApiConfig config) : impl_(std::make_unique<Impl>(runner, std::move(config))) {
  const std::size_t threads = impl_->config.threads;
  impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  impl_->routes();
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::start() {
  auto& s = impl_->server;
  if (impl_->config.port == 0) {
    port_ = s.bind_to_any_port(impl_->config.host);
    if (port_ < 0) throw Error(ErrorCode::ConnectionFailed, "cannot bind " + impl_->config.host);
  } else {
    if (!s.bind_to_port(impl_->config.host, impl_->config.port))
      throw Error(ErrorCode::ConnectionFailed,
                  "cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
    port_ = impl_->config.port;
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  return port_;
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->stopping = true;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace botverse
