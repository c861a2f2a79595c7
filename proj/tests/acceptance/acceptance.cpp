// Acceptance run: one PASS/FAIL line per primary criterion.
// Usage: botverse_acceptance [criterion numbers...]

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "api_harness.hpp"
#include "botverse/behavior.hpp"
#include "botverse/memory.hpp"
#include "botverse/report.hpp"
#include "botverse/store.hpp"
#include "oracles.hpp"
#include "store_script.hpp"
#include "support.hpp"
#include "ws_server.hpp"

using namespace botverse;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

// Hash of the desk run, shared by the determinism and sandbox checks.
std::string g_desk_hash;

// ---- 1: memory oracle

std::vector<MemoryItem> random_items(Rng& rng, std::size_t n, VirtualTime now, bool ties) {
  std::vector<MemoryItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    MemoryItem m;
    m.post_id = "p" + std::to_string(rng.below(1'000'000)) + "_" + std::to_string(i);
    m.observed_at = VirtualTime{static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(now.ms) + 1))};
    m.likes_seen = static_cast<std::int64_t>(rng.below(200));
    m.reposts_seen = static_cast<std::int64_t>(rng.below(40));
    items.push_back(m);
  }
  if (ties && n > 4) {
    const std::size_t extra = std::min<std::size_t>(n / 4, 2000 - n);
    for (std::size_t i = 0; i < extra; ++i) {
      MemoryItem copy = items[rng.below(n)];
      copy.post_id = "tie_" + std::to_string(i);
      items.push_back(copy);
    }
  }
  return items;
}

MemoryParams random_params(Rng& rng) {
  MemoryParams p;
  p.alpha = rng.uniform() * 3.0;
  p.beta = rng.uniform() * 3.0 + 0.01;
  p.half_life_s = 1.0 + rng.uniform() * 7 * 86400.0;
  p.repost_weight = 1.0 + rng.uniform() * 3.0;
  p.engagement_cap = 1 + static_cast<std::int64_t>(rng.below(1000));
  return p;
}

Outcome memory_oracle() {
  Rng rng(20240501);
  const auto t0 = Clock::now();
  int mismatches = 0, tie_instances = 0;
  std::size_t largest = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const VirtualTime now{static_cast<std::int64_t>(rng.below(1'000'000'000)) + 1};
    const bool ties = trial % 2 == 0;
    const std::size_t n = static_cast<std::size_t>(rng.below(ties ? 1600 : 2001));
    const auto items = random_items(rng, n, now, ties);
    largest = std::max(largest, items.size());
    tie_instances += ties && items.size() > n;
    const MemoryParams p = random_params(rng);
    const std::size_t k = static_cast<std::size_t>(rng.below(items.size() + 5));
    std::vector<std::string> got;
    for (const auto& m : retrieve_top_k(items, now, k, p)) got.push_back(m.post_id);
    if (got != oracle::top_k(items, now, k, p)) ++mismatches;
  }
  const double elapsed = seconds_since(t0);
  return {mismatches == 0 && elapsed < 10.0 && largest <= 2000,
          "200 instances, " + std::to_string(tie_instances) + " with ties, max " + std::to_string(largest) +
              " items, mismatches " + std::to_string(mismatches) + ", " + fmt(elapsed) + " s"};
}

// ---- 2: spot values

Outcome spot_values() {
  // ln 10 / ln 101 to 40 digits.
  constexpr double kImportance9 = 0.4989219858054781181374508597684096846622;
  bool recency_ok = true;
  for (double hl : {1.0, 37.5, 3600.0, 86400.0})
    recency_ok &= recency(VirtualTime{static_cast<std::int64_t>(hl * 1000) + 5}, VirtualTime{5}, hl) == 0.5;
  const double imp_err = std::abs(importance(9, 0, MemoryParams{}) - kImportance9);

  Rng rng(77);
  double worst = 0.0;
  bool order_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const VirtualTime now{static_cast<std::int64_t>(rng.below(100'000'000)) + 1};
    const auto items = random_items(rng, 400, now, true);
    const MemoryParams p = random_params(rng);
    const double c = 0.01 + rng.uniform() * 100.0;
    MemoryParams scaled = p;
    scaled.alpha *= c;
    scaled.beta *= c;
    for (const auto& m : items) {
      const double a = c * score(m, now, p).value;
      const double b = score(m, now, scaled).value;
      worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(a)));
    }
    order_ok &= retrieve_top_k(items, now, 50, p) == retrieve_top_k(items, now, 50, scaled);
  }
  return {recency_ok && imp_err <= 1e-12 && worst <= 1e-12 && order_ok,
          std::string("recency ") + (recency_ok ? "exact" : "off") + ", importance err " + sci(imp_err) +
              ", covariance err " + sci(worst) + ", top-k order " + (order_ok ? "identical" : "differs")};
}

// ---- 3: determinism with kill and resume

Outcome determinism() {
  const auto c = testing::desk();
  std::string hashes[2];
  std::uint64_t events = 0;
  double slowest = 0.0;
  for (auto& h : hashes) {
    auto store = make_memory_store();
    const auto t0 = Clock::now();
    const auto out = run_scenario(c, 42, *store);
    slowest = std::max(slowest, seconds_since(t0));
    h = out.log_hash;
    events = out.events;
  }
  g_desk_hash = hashes[0];
  if (hashes[0] != hashes[1]) return {false, "two runs differ"};

  testing::TempDir dir;
  const std::string db = (dir / "desk.db").string();
  const std::uint64_t mid = events / 2;
  const pid_t child = ::fork();
  if (child < 0) return {false, "fork failed"};
  if (child == 0) {
    auto store = make_sql_store(db);
    EngineOptions o;
    o.generator = make_generator(c);
    o.store = store.get();
    Engine e(c, 42, o);
    e.submit(ControlEvent{1, testing::resume_cmd()});
    while (e.event_count() < mid) e.step();
    ::raise(SIGKILL);
    ::_exit(3);
  }
  int status = 0;
  ::waitpid(child, &status, 0);
  if (!WIFSIGNALED(status) || WTERMSIG(status) != SIGKILL) return {false, "writer was not killed"};

  auto store = make_sql_store(db);
  const auto cp = store->latest_checkpoint();
  const auto stored = store->counts().events;
  const auto t0 = Clock::now();
  const auto resumed = run_scenario(c, 42, *store, std::nullopt, true);
  slowest = std::max(slowest, seconds_since(t0));
  const bool same = resumed.log_hash == hashes[0];
  return {same && slowest < 60.0,
          "hash " + hashes[0].substr(0, 16) + ", killed at event " + std::to_string(stored) + "/" +
              std::to_string(events) + ", checkpoint " + (cp ? std::to_string(cp->event_count) : "none") +
              ", resumed hash " + (same ? "equal" : "differs") + ", slowest run " + fmt(slowest) + " s"};
}

// ---- 4: temporal realism

Outcome temporal_realism() {
  // Default curve and lognormals; the program omits W so consecutive
  // actions in a session are separated by exactly one configured gap.
  const json j = {{"name", "temporal"},
                  {"duration", "7d"},
                  {"start_hour", 0},
                  {"populations", json::array({json{{"archetype", "benign"},
                                                    {"count", 100},
                                                    {"handle_base", "t"},
                                                    {"dna", "PLLRLSLI"}}})}};
  const auto c = scenario_from_json(j);
  std::ostringstream log;
  EngineOptions o;
  o.generator = make_generator(c);
  o.log = &log;
  Engine e(c, 7, o);
  e.submit(ControlEvent{1, testing::resume_cmd()});
  e.run_until(c.duration);

  std::vector<double> hourly(24, 0.0), gaps;
  std::istringstream in(log.str());
  std::string line;
  while (std::getline(in, line)) {
    const json ev = json::parse(line);
    const std::string type = ev.at("type");
    if (type == "action_due" && !ev.contains("completion")) {
      hourly[static_cast<std::size_t>(hour_of_day(VirtualTime{ev.at("at").get<std::int64_t>()}))] += 1;
    } else if (type == "agent_wake") {
      const auto& s = ev.at("result").at("session");
      for (std::size_t i = 1; i < s.size(); ++i)
        gaps.push_back((s[i].at("at").get<double>() - s[i - 1].at("at").get<double>()) / 1000.0);
    }
  }
  const TemporalModel m = default_temporal_model();
  const std::vector<double> curve(m.circadian.begin(), m.circadian.end());
  const double r = oracle::pearson(hourly, curve);
  const auto ref = oracle::lognormal_reference(m.intra_gap.mu, m.intra_gap.sigma, gaps.size(), 99);
  const auto ks = oracle::ks_two_sample(gaps, ref, 0.01);
  const double cv = oracle::coefficient_of_variation(gaps);
  const double actions = std::accumulate(hourly.begin(), hourly.end(), 0.0);
  return {r > 0.9 && !ks.reject && cv > 1.0,
          std::to_string(static_cast<long>(actions)) + " actions, pearson " + fmt(r, 4) + ", KS D " + fmt(ks.d, 4) +
              " crit " + fmt(ks.critical, 4) + " over " + std::to_string(gaps.size()) + " gaps, CV " + fmt(cv)};
}

// ---- 5: scale

struct ChildRun {
  bool ok = false;
  double seconds = 0;
  long peak_kb = 0;
};

ChildRun run_in_child(const ScenarioConfig& c) {
  const auto t0 = Clock::now();
  const pid_t child = ::fork();
  if (child == 0) {
    try {
      auto store = make_memory_store();
      run_scenario(c, 42, *store);
      ::_exit(0);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "%s\n", e.what());
      ::_exit(2);
    }
  }
  int status = 0;
  struct rusage usage {};
  ::wait4(child, &status, 0, &usage);
  return {WIFEXITED(status) && WEXITSTATUS(status) == 0, seconds_since(t0), usage.ru_maxrss};
}

Outcome scale() {
  const auto base = testing::source_dir() / "scenarios" / "scale_500.json";
  const auto c500 = load_scenario(base);
  const auto big = run_in_child(c500);
  const double gb = static_cast<double>(big.peak_kb) / (1024.0 * 1024.0);

  json j = json::parse(testing::read_file(base));
  j["name"] = "scale_2000";
  j["duration"] = "6h";
  j["populations"][0]["count"] = 1400;
  j["populations"][1]["count"] = 600;
  const auto wide = run_in_child(scenario_from_json(j, base.parent_path()));
  return {big.ok && big.seconds < 120.0 && gb < 2.0 && wide.ok,
          "500 agents x 24h " + std::string(big.ok ? "ok" : "failed") + " in " + fmt(big.seconds) + " s, peak " +
              fmt(gb * 1024.0, 1) + " MB; 2000 agents x 6h " + (wide.ok ? "ok" : "failed") + " in " +
              fmt(wide.seconds) + " s"};
}

// ---- 6: diffusion accounting

Outcome diffusion() {
  const auto c = testing::desk();
  auto store = make_memory_store();
  testing::TempDir out;
  const auto outcome = run_scenario(c, 42, *store, out.path());
  const auto& report = outcome.report;
  if (report.narratives.size() != 1) return {false, "expected one narrative"};
  const auto& n = report.narratives[0];
  const auto cascades = compute_cascades(read_run(out.path()), n.narrative_id);
  std::int64_t total = 0, by_size = 0, max_depth = 0;
  for (const auto& k : cascades) {
    total += k.size;
    max_depth = std::max(max_depth, k.depth);
  }
  for (const auto& [size, count] : n.size_distribution) by_size += size * count;
  const bool conserved = total == n.tagged_posts && by_size == n.tagged_posts &&
                         static_cast<std::int64_t>(cascades.size()) == n.cascade_count;

  std::ifstream csv(out / "graph.csv");
  const auto depths = oracle::csv_cascade_depths(csv, n.narrative_id);
  std::size_t checked = 0, wrong = 0;
  for (const auto& k : cascades) {
    auto it = depths.find(k.root);
    if (k.size == 1) {
      wrong += it != depths.end();
      continue;
    }
    ++checked;
    wrong += it == depths.end() || it->second != k.depth;
  }
  wrong += depths.size() != checked;
  const bool bounds = n.adoption <= n.reach && n.reach <= 50;
  return {bounds && conserved && wrong == 0 && n.tagged_posts > 0,
          "adoption " + std::to_string(n.adoption) + " reach " + std::to_string(n.reach) + ", " +
              std::to_string(n.tagged_posts) + " tagged posts in " + std::to_string(cascades.size()) +
              " cascades (" + (conserved ? "conserved" : "not conserved") + "), max depth " +
              std::to_string(max_depth) + ", " + std::to_string(checked) + " multi-post depths checked, " +
              std::to_string(wrong) + " wrong"};
}

// ---- 7: isolation

std::string capture(const std::string& cmd, int* code) {
  std::string out;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  const int status = ::pclose(p);
  *code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return out;
}

Outcome isolation() {
  int code = -1;
  capture("unshare -rn true 2>&1", &code);
  if (code != 0) return {false, "deny-all network namespace unavailable (unshare -rn)"};

  // Stage binary and inputs outside the source tree: the namespace's root
  // may lack permission to traverse a private home directory.
  testing::TempDir dir;
  namespace fs = std::filesystem;
  fs::create_directories(dir / "scenarios");
  fs::create_directories(dir / "data");
  fs::copy_file(BOTVERSE_CLI_PATH, dir / "botverse");
  fs::copy_file(testing::desk_path(), dir / "scenarios" / "desk.json");
  const auto c_desk = testing::desk();
  fs::copy_file(c_desk.ingestion.replay_path, dir / "data" / c_desk.ingestion.replay_path.filename());
  const std::string cmd = "cd \"" + dir.path().string() +
                          "\" && unshare -rn sh -c 'ip link set lo down 2>/dev/null; exec ./botverse run "
                          "--scenario scenarios/desk.json --out out' 2>&1";
  const std::string out = capture(cmd, &code);
  std::smatch m;
  static const std::regex re("log_hash ([0-9a-f]{64})");
  if (code != 0) std::cerr << out;
  const bool sandbox_ok = code == 0 && std::regex_search(out, m, re) && (g_desk_hash.empty() || m[1] == g_desk_hash);

  // Live intake against a local endpoint that records client writes.
  std::vector<std::string> frames;
  for (int i = 0; i < 40; ++i)
    frames.push_back(testing::post_frame("did:plc:live" + std::to_string(i % 5), "r" + std::to_string(i),
                                         "live post " + std::to_string(i)));
  testing::FrameServer server(frames);
  json j = testing::small_scenario_json(6, 3, "24h");
  j["seed"] = 5;
  j["ingestion"] = {{"mode", "live"}, {"endpoint", server.url()}, {"sample_rate", 1.0}};
  const auto c = scenario_from_json(j);
  auto store = make_memory_store();
  RunnerConfig rc;
  rc.snapshot_every = std::chrono::milliseconds(50);
  Runner runner(c, *store, [c](EngineOptions o) { return std::make_unique<Engine>(c, 5, std::move(o)); }, {}, rc);
  runner.start();
  for (int i = 0; i < 3000 && !runner.ready(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  ControlCommand pacing;
  pacing.kind = ControlCommand::Kind::set_pacing;
  pacing.pacing = PacingMode{PacingMode::Kind::scaled, 0.002};
  runner.submit(pacing);
  runner.submit(testing::resume_cmd());
  std::int64_t external = 0;
  for (int i = 0; i < 1000; ++i) {
    external = 0;
    for (const auto& row : store->events()) external += row.kind == "external_ingest";
    if (external >= 40) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  const json intake = runner.snapshot()->ingestion;
  runner.stop();
  const bool live_ok = server.handshake_done() && server.frames_sent() == frames.size() && external > 0 &&
                       server.bytes_after_handshake() == 0;
  return {sandbox_ok && live_ok,
          std::string("desk under deny-all namespace ") + (sandbox_ok ? "ok, same hash" : "failed") +
              "; live intake applied " + std::to_string(external) + " posts, client bytes after handshake " +
              std::to_string(server.bytes_after_handshake()) + " (loopback check, no packet capture)" +
              (live_ok ? std::string() : " " + intake.dump())};
}

// ---- 8: store conformance

Outcome store_conformance() {
  testing::TempDir dir;
  int differing = 0;
  const int sequences = 60;
  for (std::uint64_t seed = 1; seed <= sequences; ++seed) {
    auto mem = make_memory_store();
    auto sql = make_sql_store((dir / ("s" + std::to_string(seed) + ".db")).string());
    if (testing::Script(seed).run(*mem, 80) != testing::Script(seed).run(*sql, 80)) ++differing;
  }

  const std::string path = (dir / "kill.db").string();
  int fds[2];
  if (::pipe(fds) != 0) return {false, "pipe failed"};
  const pid_t child = ::fork();
  if (child == 0) {
    ::close(fds[0]);
    auto s = make_sql_store(path);
    for (std::int64_t i = 0;; ++i) {
      AppliedBatch b;
      b.event = EventRow{i, VirtualTime{i}, static_cast<std::uint64_t>(i), "k", "{}", std::string(64, 'f')};
      b.posts.push_back(testing::simple_post("p" + std::to_string(i), i));
      s->commit(b);
      if (::write(fds[1], &i, sizeof i) != sizeof i) ::_exit(1);
    }
  }
  ::close(fds[1]);
  std::int64_t last = -1, ack = 0;
  while (last < 500 && ::read(fds[0], &ack, sizeof ack) == sizeof ack) last = ack;
  ::kill(child, SIGKILL);
  ::waitpid(child, nullptr, 0);
  while (::read(fds[0], &ack, sizeof ack) == sizeof ack) last = ack;
  ::close(fds[0]);
  auto s = make_sql_store(path);
  std::int64_t lost = 0;
  for (std::int64_t i = 0; i <= last; ++i) lost += !s->get_post("p" + std::to_string(i));
  const auto counts = s->counts();
  const bool kill_ok = lost == 0 && counts.events >= last + 1 && counts.posts == counts.events;
  return {differing == 0 && kill_ok,
          std::to_string(sequences) + " sequences, " + std::to_string(differing) + " differing; killed after " +
              std::to_string(last + 1) + " acknowledged commits, " + std::to_string(lost) + " lost"};
}

// ---- 9: API consistency

Outcome api_consistency() {
  testing::ApiHarness h(testing::desk());
  std::vector<std::uint64_t> issued;
  auto issue = [&](const json& body) -> std::uint64_t {
    auto [status, reply] = h.control(body);
    if (status != 202) return 0;
    issued.push_back(reply.at("command_id").get<std::uint64_t>());
    return issued.back();
  };
  std::atomic<std::uint64_t> pause_id{0};
  testing::StreamReader reader(h.port, [&](const json& f) {
    return pause_id != 0 && testing::frame_has_control(f, pause_id);
  });
  bool ok = issue(json{{"type", "set_pacing"}, {"pacing", {{"mode", "scaled"}, {"factor", 0.00015}}}}) != 0;
  ok &= issue(json{{"type", "resume"}}) != 0;
  ok &= h.wait_snapshot([](const Snapshot& s) { return s.clock.ms > 3 * kMsPerHour; });
  ok &= issue(json{{"type", "inject_narrative"}, {"narrative_id", "N2"}, {"text", "the water is unsafe"}}) != 0;
  pause_id = issue(json{{"type", "pause"}});
  ok &= pause_id != 0;
  reader.join();
  ok &= reader.matched();
  ok &= h.wait_snapshot([](const Snapshot& s) { return s.status == "paused"; });
  if (!ok) return {false, "could not drive the run to a pause"};
  const auto consistency = testing::compare_stream_with_rest(h, reader.frames());
  const auto once = testing::commands_logged_once(*h.store, issued);
  return {consistency.ok && once.ok, consistency.detail + "; " + std::to_string(issued.size()) +
                                         " commands: " + (once.ok ? "each logged once" : once.detail)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"memory oracle equivalence", memory_oracle},
      {"scoring spot values", spot_values},
      {"end-to-end determinism", determinism},
      {"temporal realism", temporal_realism},
      {"scale", scale},
      {"diffusion accounting", diffusion},
      {"isolation and offline", isolation},
      {"store conformance", store_conformance},
      {"api consistency", api_consistency},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " " << criteria[i].first << ": " << o.detail
              << " [" << fmt(seconds_since(t0), 1) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
