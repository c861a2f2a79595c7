#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "botverse/engine.hpp"
#include "botverse/queue.hpp"

namespace botverse {

// One sequence-numbered push frame. Frames are gap-free: replaying all of
// them from seq 0 reproduces the store's posts and interactions.
struct StateDelta {
  std::uint64_t seq = 0;
  VirtualTime as_of;
  std::vector<Post> new_posts;
  std::vector<Interaction> new_interactions;
  std::vector<json> agent_updates;
  std::vector<json> controls;
  json counters = json::object();
};

json to_json(const StateDelta& d);

// Point-in-time view served to readers; immutable once published.
struct Snapshot {
  std::string status = "paused";
  VirtualTime clock;
  std::uint64_t event_count = 0;
  std::uint64_t last_command_id = 0;
  std::string log_hash;
  PacingMode pacing;
  json counters = json::object();
  json ingestion = json::object();
  json narratives = json::object();
  std::vector<json> agents;               // summary views, engine order
  std::map<std::string, json> agent_detail;  // by id
  std::map<std::string, MemoryParams> memory_params;
};

struct RunnerConfig {
  std::size_t snapshot_every_events = 500;
  std::chrono::milliseconds snapshot_every{1000};
  std::size_t command_capacity = 1024;
  bool stop_when_finished = false;
  bool autostart = false;
  std::optional<std::filesystem::path> record_path;  // live frames are also written here
};

// Owns the engine on a dedicated loop thread. Everything else talks to it
// through the command queue and the inbound post queue, and reads published
// snapshots and deltas.
class Runner {
 public:
  using EngineFactory = std::function<std::unique_ptr<Engine>(EngineOptions)>;

  Runner(ScenarioConfig scenario, Store& store, EngineFactory factory, EngineOptions options = {},
         RunnerConfig config = {});
  ~Runner();
  Runner(const Runner&) = delete;
  Runner& operator=(const Runner&) = delete;

  void start();
  void stop();
  // Blocks until the engine reaches the end of the scenario (or stop()).
  void wait_finished();

  bool ready() const { return ready_.load(); }
  std::optional<std::string> failure() const;

  // Validates against the requested status and enqueues. Returns the command
  // id. Throws Error{Conflict} for a status conflict, Error{NotRunning}
  // before the engine is ready or after it finished.
  std::uint64_t submit(ControlCommand command);

  std::shared_ptr<const Snapshot> snapshot() const;
  // Frames with seq >= from, waiting up to `wait` for the first new one.
  std::vector<StateDelta> deltas_from(std::uint64_t from, std::chrono::milliseconds wait) const;
  std::uint64_t next_delta_seq() const;
  bool stopping() const { return stop_.load(); }

  Store& store() { return store_; }
  const ScenarioConfig& scenario() const { return scenario_; }

 private:
  void loop();
  void on_live_record(RawRecord&& raw);
  void publish(Engine& engine, bool force);
  void absorb(const StepResult& r);

  ScenarioConfig scenario_;
  Store& store_;
  EngineFactory factory_;
  EngineOptions options_;
  RunnerConfig config_;

  std::thread thread_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> ready_{false};
  std::atomic<bool> finished_{false};

  BoundedQueue<ControlEvent> commands_;
  BoundedQueue<ExternalPost> inbound_;
  std::unique_ptr<LiveStream> live_;
  std::unique_ptr<ReplayWriter> recorder_;
  std::mutex live_mutex_;
  std::optional<Sampler> live_sampler_;
  std::uint64_t live_discarded_ = 0;  // loop thread only

  // Guarded by submit_mutex_.
  mutable std::mutex submit_mutex_;
  std::uint64_t next_command_id_ = 1;
  EngineStatus requested_ = EngineStatus::paused;
  std::set<std::string> submitted_narratives_;

  mutable std::mutex state_mutex_;
  mutable std::condition_variable state_cv_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::vector<StateDelta> history_;
  std::optional<std::string> failure_;

  // Loop-thread accumulation for the next frame.
  StateDelta pending_;
  std::set<AgentId> touched_;
  std::size_t events_since_publish_ = 0;
  std::chrono::steady_clock::time_point last_publish_;
};

struct ApiConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> cors_origins;  // exact Origin matches; "*" allows all
  std::size_t threads = 16;
};

// HTTP/JSON front end over a Runner.
class ApiServer {
 public:
  ApiServer(Runner& runner, ApiConfig config);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

// "host:port", ":port" or "port".
std::pair<std::string, int> parse_bind(const std::string& bind);

}  // namespace botverse
