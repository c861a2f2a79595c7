// botverse: operator entry point (validate, run, serve, resume, record, analyze).
#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "botverse/api.hpp"
#include "botverse/errors.hpp"
#include "botverse/report.hpp"

using namespace botverse;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

bool is_validation(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidScenario:
    case ErrorCode::InvalidSpec:
    case ErrorCode::MissingField:
    case ErrorCode::OutOfRange:
    case ErrorCode::MalformedJson:
    case ErrorCode::InvalidCommand: return true;
    default: return false;
  }
}

struct ScenarioFlags {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> replay;
  std::optional<double> sample_rate;
};

void add_scenario_flags(CLI::App* cmd, ScenarioFlags& f, bool with_overrides = true) {
  cmd->add_option("--scenario", f.scenario, "scenario JSON file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed (falls back to the scenario's seed field)");
  if (!with_overrides) return;
  cmd->add_option("--replay", f.replay, "replay file; switches ingestion to replay mode")->check(CLI::ExistingFile);
  cmd->add_option("--sample-rate", f.sample_rate, "ingestion sample rate in [0,1]");
}

ScenarioConfig load(const ScenarioFlags& f) {
  const std::filesystem::path path = std::filesystem::absolute(f.scenario);
  std::ifstream in(path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::InvalidScenario, path.string() + ": not valid JSON");
  if (f.replay || f.sample_rate) {
    json ing = j.value("ingestion", json::object());
    if (f.replay) {
      ing["mode"] = "replay";
      ing["replay"] = std::filesystem::absolute(*f.replay).string();
    }
    if (f.sample_rate) ing["sample_rate"] = *f.sample_rate;
    j["ingestion"] = ing;
  }
  ScenarioConfig c = scenario_from_json(j, path.parent_path());
  validate(c);
  return c;
}

std::uint64_t seed_of(const ScenarioFlags& f, const ScenarioConfig& c) {
  if (f.seed) return *f.seed;
  if (c.seed) return *c.seed;
  throw Error(ErrorCode::InvalidScenario, "seed: pass --seed (or set \"seed\" in the scenario); runs never pick one silently");
}

void print_summary(const RunOutcome& o) {
  std::cerr << "events " << o.events << " posts " << o.report.posts << " interactions " << o.report.interactions << '\n';
  for (const auto& n : o.report.narratives)
    std::cerr << "narrative " << n.narrative_id << " reach " << n.reach << " adoption " << n.adoption << " cascades "
              << n.cascade_count << " max_depth " << n.max_cascade_depth << '\n';
  std::cout << "log_hash " << o.log_hash << std::endl;
}

// Runs under the Runner (scaled pacing or live ingestion), optionally with
// the HTTP API, until the scenario ends or a signal arrives.
RunOutcome run_with_runner(const ScenarioConfig& config, std::uint64_t seed, Store& store, bool resume,
                           const RunnerConfig& rc, const std::optional<PacingMode>& pacing,
                           const std::optional<ApiConfig>& api, bool wait_for_signal,
                           const std::optional<std::string>& out_dir) {
  EngineOptions options;
  options.generator = make_generator(config);
  if (out_dir) options.renderer = std::make_shared<StubRenderer>(std::filesystem::path(*out_dir) / "images");
  auto factory = [&config, seed, resume, &store, pacing](EngineOptions o) {
    std::unique_ptr<Engine> e = resume ? Engine::resume(config, seed, store, o) : std::make_unique<Engine>(config, seed, o);
    if (pacing && e->pacing() != *pacing) {
      ControlCommand cmd;
      cmd.kind = ControlCommand::Kind::set_pacing;
      cmd.pacing = *pacing;
      e->submit(ControlEvent{e->last_command_id() + 1, cmd});
      e->step();
    }
    return e;
  };
  Runner runner(config, store, factory, options, rc);
  runner.start();
  std::unique_ptr<ApiServer> server;
  if (api) {
    server = std::make_unique<ApiServer>(runner, *api);
    const int port = server->start();
    std::cerr << "serving on http://" << api->host << ":" << port << std::endl;
  }
  std::thread waiter([&] { runner.wait_finished(); });
  while (!g_interrupted) {
    if (!wait_for_signal && runner.snapshot()->status == "finished") break;
    if (runner.failure()) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  if (server) server->stop();
  runner.stop();
  waiter.join();
  if (auto f = runner.failure()) throw std::runtime_error(*f);

  RunOutcome o;
  const RunRecord run = read_run(store);
  o.report = compute_report(run);
  o.log_hash = o.report.log_hash;
  o.events = run.events.size();
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"botverse: a deterministic social-network simulator with LLM-driven agents"};
  app.require_subcommand(1);
  int verbosity = 0;
  app.add_flag("-v,--verbose", verbosity, "more diagnostics on standard error");

  ScenarioFlags vflags;
  auto* validate_cmd = app.add_subcommand("validate", "check a scenario file");
  add_scenario_flags(validate_cmd, vflags, false);

  ScenarioFlags rflags;
  std::optional<std::string> out_dir, store_url, pacing_text, record_path;
  auto* run_cmd = app.add_subcommand("run", "run a scenario headless to completion");
  add_scenario_flags(run_cmd, rflags);
  run_cmd->add_option("--out", out_dir, "directory for the event log, exports and report");
  run_cmd->add_option("--store", store_url, "memory | sqlite:<path> (default: $BOTVERSE_STORE_URL, else memory)");
  run_cmd->add_option("--pacing", pacing_text, "free_run | scaled:<wall seconds per virtual second>");
  run_cmd->add_option("--record", record_path, "also write live frames to this replay file");

  ScenarioFlags sflags;
  std::string bind = "127.0.0.1:8080";
  std::vector<std::string> cors;
  bool autostart = false;
  bool exit_when_finished = false;
  std::optional<std::string> s_out, s_store, s_pacing, s_record;
  bool s_resume = false;
  auto* serve_cmd = app.add_subcommand("serve", "run the engine with the HTTP API");
  add_scenario_flags(serve_cmd, sflags);
  serve_cmd->add_option("--bind", bind, "host:port")->capture_default_str();
  serve_cmd->add_option("--cors", cors, "allowed browser origins (repeatable, * for any)");
  serve_cmd->add_option("--out", s_out, "export directory written on shutdown");
  serve_cmd->add_option("--store", s_store, "memory | sqlite:<path>");
  serve_cmd->add_option("--pacing", s_pacing, "free_run | scaled:<factor>");
  serve_cmd->add_option("--record", s_record, "also write live frames to this replay file");
  serve_cmd->add_flag("--autostart", autostart, "resume immediately instead of waiting for a resume command");
  serve_cmd->add_flag("--exit-when-finished", exit_when_finished, "stop serving when the scenario ends");
  serve_cmd->add_flag("--resume", s_resume, "continue from the store's latest checkpoint");

  ScenarioFlags mflags;
  std::string m_store;
  std::optional<std::string> m_out;
  auto* resume_cmd = app.add_subcommand("resume", "continue a run from its latest checkpoint");
  add_scenario_flags(resume_cmd, mflags);
  resume_cmd->add_option("--store", m_store, "sqlite:<path> holding the interrupted run")->required();
  resume_cmd->add_option("--out", m_out, "directory for the event log, exports and report");

  std::string rec_out;
  std::string endpoint = kDefaultJetstreamEndpoint;
  double rec_seconds = 60.0;
  std::size_t rec_max = 0;
  auto* record_cmd = app.add_subcommand("record", "capture a live stream to a replay file");
  record_cmd->add_option("--record,--out", rec_out, "replay file to write")->required();
  record_cmd->add_option("--endpoint", endpoint, "WebSocket endpoint")->capture_default_str();
  record_cmd->add_option("--seconds", rec_seconds, "capture duration")->capture_default_str();
  record_cmd->add_option("--max-records", rec_max, "stop after this many records (0: no limit)");

  std::optional<std::string> a_out, a_store, a_narrative;
  auto* analyze_cmd = app.add_subcommand("analyze", "recompute the diffusion report from a run");
  analyze_cmd->add_option("--out", a_out, "a run's out_dir");
  analyze_cmd->add_option("--store", a_store, "a run's store");
  analyze_cmd->add_option("--narrative", a_narrative, "print this narrative's cascades instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    if (*validate_cmd) {
      const ScenarioConfig c = load(vflags);
      std::int64_t agents = 0;
      for (const auto& p : c.populations) agents += p.count;
      std::cout << "ok " << c.name << " agents " << agents << " duration_ms " << c.duration.ms << " hash "
                << scenario_hash(c) << std::endl;
      return kOk;
    }

    if (*run_cmd) {
      const ScenarioConfig c = load(rflags);
      const std::uint64_t seed = seed_of(rflags, c);
      auto store = open_store(store_url.value_or(""));
      std::optional<PacingMode> pacing;
      if (pacing_text) pacing = parse_pacing(*pacing_text);
      const bool scaled = pacing && pacing->kind == PacingMode::Kind::scaled;
      if (c.ingestion.mode == StreamMode::live && !scaled)
        throw Error(ErrorCode::InvalidScenario, "ingestion: live mode needs --pacing scaled:<factor>");
      const bool needs_runner = scaled;
      RunOutcome o;
      if (needs_runner) {
        RunnerConfig rc;
        rc.autostart = true;
        rc.stop_when_finished = true;
        if (record_path) rc.record_path = *record_path;
        o = run_with_runner(c, seed, *store, false, rc, pacing, std::nullopt, false, out_dir);
        if (out_dir) export_run(read_run(*store), o.report, *out_dir);
      } else {
        o = run_scenario(c, seed, *store, out_dir ? std::optional<std::filesystem::path>(*out_dir) : std::nullopt);
      }
      print_summary(o);
      return kOk;
    }

    if (*serve_cmd) {
      const ScenarioConfig c = load(sflags);
      const std::uint64_t seed = seed_of(sflags, c);
      auto store = open_store(s_store.value_or(""));
      std::optional<PacingMode> pacing;
      if (s_pacing) pacing = parse_pacing(*s_pacing);
      RunnerConfig rc;
      rc.autostart = autostart;
      rc.stop_when_finished = false;
      if (s_record) rc.record_path = *s_record;
      ApiConfig api;
      std::tie(api.host, api.port) = parse_bind(bind);
      api.cors_origins = cors;
      const RunOutcome o = run_with_runner(c, seed, *store, s_resume, rc, pacing, api, !exit_when_finished, s_out);
      if (s_out) export_run(read_run(*store), o.report, *s_out);
      print_summary(o);
      return kOk;
    }

    if (*resume_cmd) {
      const ScenarioConfig c = load(mflags);
      const std::uint64_t seed = seed_of(mflags, c);
      auto store = open_store(m_store);
      const RunOutcome o =
          run_scenario(c, seed, *store, m_out ? std::optional<std::filesystem::path>(*m_out) : std::nullopt, true);
      print_summary(o);
      return kOk;
    }

    if (*record_cmd) {
      StreamConfig sc;
      sc.mode = StreamMode::live;
      sc.endpoint = endpoint;
      validate(sc);
      ReplayWriter writer(rec_out);
      std::mutex m;
      std::size_t n = 0;
      LiveStream stream(sc, [&](RawRecord&& r) {
        std::lock_guard lock(m);
        if (rec_max && n >= rec_max) return;
        writer.write(r);
        ++n;
        if (rec_max && n >= rec_max) g_interrupted = true;
      });
      stream.start();
      const auto end = std::chrono::steady_clock::now() + std::chrono::duration<double>(rec_seconds);
      while (!g_interrupted && std::chrono::steady_clock::now() < end)
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      stream.stop();
      writer.flush();
      const auto counters = stream.counters();
      std::cerr << "records " << n << " protocol_errors " << counters.protocol_errors << " reconnects "
                << counters.reconnects << std::endl;
      return kOk;
    }

    if (*analyze_cmd) {
      if (!a_out == !a_store) throw Error(ErrorCode::InvalidCommand, "analyze needs exactly one of --out or --store");
      RunRecord run;
      std::unique_ptr<Store> store;
      if (a_out) {
        run = read_run(std::filesystem::path(*a_out));
      } else {
        store = open_store(*a_store);
        run = read_run(*store);
      }
      if (a_narrative) {
        json out = json::array();
        for (const auto& cascade : compute_cascades(run, *a_narrative)) out.push_back(to_json(cascade));
        std::cout << out.dump(2) << std::endl;
      } else {
        std::cout << to_json(compute_report(run)).dump(2) << std::endl;
      }
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return is_validation(e.code()) ? kInvalid : kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kRuntime;
  }
  return kOk;
}
