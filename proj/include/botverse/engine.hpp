#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "botverse/behavior.hpp"
#include "botverse/brain.hpp"
#include "botverse/domain.hpp"
#include "botverse/hash.hpp"
#include "botverse/ingestion.hpp"
#include "botverse/memory.hpp"
#include "botverse/scenario.hpp"
#include "botverse/store.hpp"

namespace botverse {

struct PacingMode {
  enum class Kind { free_run, scaled };
  Kind kind = Kind::free_run;
  double factor = 1.0;  // wall seconds per virtual second

  bool operator==(const PacingMode&) const = default;
};

json to_json(const PacingMode& p);
PacingMode pacing_from_json(const json& j);
// "free_run" or "scaled:<factor>".
PacingMode parse_pacing(std::string_view text);

struct AgentSelector {
  bool all = false;
  std::optional<Archetype> archetype;
  std::vector<AgentId> agents;

  bool operator==(const AgentSelector&) const = default;
};

struct ControlCommand {
  enum class Kind { pause, resume, set_pacing, inject_narrative, spawn_agents, patch_memory_params };
  Kind kind = Kind::pause;
  PacingMode pacing;                 // set_pacing
  std::string narrative_id;          // inject_narrative
  std::string text;
  AssigneePolicy assignees;
  bool reusable = false;
  json population;                   // spawn_agents: a population entry
  AgentSelector selector;            // patch_memory_params
  json memory_patch = json::object();

  bool operator==(const ControlCommand&) const = default;
};

std::string_view to_string(ControlCommand::Kind k);
json to_json(const ControlCommand& c);
// Validates shape and values. Throws Error{InvalidCommand}.
ControlCommand control_command_from_json(const json& j);

enum class EngineStatus { paused, running, finished };
std::string_view to_string(EngineStatus s);

struct AgentWake {
  AgentId agent;
};
struct ActionDue {
  AgentId agent;
  ActionDecision decision;
  std::optional<json> completion;  // output of an off-loop generation
};
struct ExternalIngest {
  ExternalPost post;
};
struct ControlEvent {
  std::uint64_t command_id = 0;
  ControlCommand command;
};

using EventPayload = std::variant<AgentWake, ActionDue, ExternalIngest, ControlEvent>;

struct SimEvent {
  VirtualTime at;
  std::uint64_t seq = 0;
  EventPayload payload;
  bool inbound = false;  // arrived from outside the loop (API, live stream, backend)
};

std::string_view event_type(const EventPayload& p);
// Payload fields only; the log line adds "result".
json to_json(const SimEvent& e);
SimEvent sim_event_from_json(const json& j);

// Something handed to the loop from outside; becomes a SimEvent at intake.
using InboundItem = std::variant<ControlEvent, ExternalPost, ActionDue>;

struct StepResult {
  EventRow row;
  std::vector<Post> posts;
  std::vector<Interaction> interactions;
  std::vector<AgentId> agents_touched;   // acted or received a control effect
  std::vector<AgentId> records_changed;  // persisted agent record changed
  std::optional<json> control;  // {"command_id", "command", "accepted", ...}
};

struct EngineOptions {
  std::shared_ptr<TextGenerator> generator;  // stub when null
  std::shared_ptr<Renderer> renderer;        // image posts degrade when null
  Store* store = nullptr;                    // authoritative writes; optional
  std::ostream* log = nullptr;               // NDJSON event log
  std::size_t generation_concurrency = 8;
  // Called from a worker thread whenever an off-loop generation completes.
  std::function<void()> on_completion;
};

struct AgentView {
  AgentId id;
  Persona persona;
  MemoryParams memory_params;
  std::string dna;
  std::size_t dna_position = 0;
  std::optional<std::string> campaign;
  std::uint64_t actions = 0;
  std::vector<ScoredItem> memory_top;
  std::vector<json> recent_actions;
};

json to_json(const AgentView& a, bool detail);

class Engine {
 public:
  // init: creates all agents, derives per-agent rng streams and schedules
  // each agent's first wake. Status is paused at clock 0. Throws
  // Error{InvalidScenario}.
  Engine(ScenarioConfig scenario, std::uint64_t seed, EngineOptions options = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // Rebuilds the state from the latest checkpoint in `store`, then re-applies
  // the stored events after it, checking each line byte for byte. Throws
  // Error{NoCheckpoint, CorruptCheckpoint}.
  static std::unique_ptr<Engine> resume(ScenarioConfig scenario, std::uint64_t seed, Store& store,
                                        EngineOptions options = {});

  EngineStatus status() const { return status_; }
  VirtualTime clock() const { return clock_; }
  std::uint64_t event_count() const { return event_count_; }
  std::string log_hash() const { return log_hash_.hex(); }
  PacingMode pacing() const { return pacing_; }
  std::size_t agent_count() const { return agents_.size(); }
  const ScenarioConfig& scenario() const { return scenario_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t last_command_id() const { return last_command_id_; }
  IngestionCounters ingestion_counters() const { return sampler_.counters(); }
  const std::map<std::string, json>& narratives() const { return narratives_; }

  std::optional<VirtualTime> next_event_time() const;
  std::size_t queue_size() const { return queue_.size(); }
  bool has_pending_inbound() const;
  std::size_t generations_in_flight() const;

  // Inbound items wait for the next instant boundary. Thread-compatible, not
  // thread-safe: call from the loop thread.
  void submit(ControlEvent control);
  void submit(ExternalPost post);
  // Moves the clock forward without applying anything (scaled pacing),
  // never past the next queued event.
  void advance_clock(VirtualTime t);

  // Moves finished off-loop generations into the intake.
  void poll() { drain_completions(); }
  // True when an inbound item is waiting and the clock sits at an instant
  // boundary, so the next step() applies it at the current clock.
  bool intake_due() const { return intake_ready(); }
  // True when step() would apply something right now.
  bool can_step() const;
  // Applies one event: a pending inbound item at an instant boundary, else
  // the queue head. Throws Error{EmptyQueue} when nothing is applicable.
  StepResult step();
  // Applies every event with at <= t_end (free run). Waits for off-loop
  // generations so that none is lost.
  void run_until(VirtualTime t_end);
  void finish() { status_ = EngineStatus::finished; }

  json state_json() const;
  Checkpoint make_checkpoint() const;
  void write_log_footer();

  std::vector<AgentView> agent_views(std::size_t top_k = 10) const;
  std::optional<AgentView> agent_view(const AgentId& id, std::size_t top_k = 10) const;
  bool has_agent(const AgentId& id) const { return index_.count(id) > 0; }

 private:
  struct AgentState;

  Engine(ScenarioConfig scenario, std::uint64_t seed, EngineOptions options, bool for_resume);
  void load_state(const json& state);
  void add_agent(AgentSpec spec, bool schedule_wake);
  void enqueue(VirtualTime at, EventPayload payload, bool inbound = false);
  SimEvent pop_queue();
  void start_run();
  StepResult apply(SimEvent ev);
  json apply_wake(const AgentWake& w, StepResult& out);
  json apply_action(const ActionDue& a, StepResult& out);
  json apply_completion(const ActionDue& a, StepResult& out);
  json apply_ingest(const ExternalIngest& e, StepResult& out);
  json apply_control(const ControlEvent& c, StepResult& out);
  json finish_post(AgentState& agent, ActionCode code, const std::optional<std::string>& target,
                   const json& generated, StepResult& out);
  void fanout(AgentState& actor, const std::vector<std::string>& post_ids, StepResult& out);
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) const;
  std::vector<ContextItem> context_for(const AgentState& a) const;
  std::optional<std::string> narrative_of_post(const std::string& post_id) const;
  std::string latest_topic() const;
  void drain_completions();
  void submit_generation(AgentState& agent, const ActionDue& action, PromptBundle bundle, bool image,
                         std::string topic);
  void resubmit_pending();
  bool intake_ready() const;
  std::deque<InboundItem>::iterator next_intake();
  std::string image_topic(const AgentState& a) const;
  AgentView view_of(const AgentState& a, std::size_t top_k) const;

  ScenarioConfig scenario_;
  std::uint64_t seed_;
  EngineOptions options_;
  std::shared_ptr<TextGenerator> generator_;

  VirtualTime clock_;
  EngineStatus status_ = EngineStatus::paused;
  bool started_ = false;
  PacingMode pacing_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t event_count_ = 0;
  std::uint64_t next_post_ = 1;
  std::uint64_t last_command_id_ = 0;
  LogHash log_hash_;

  std::vector<SimEvent> queue_;  // binary heap on (at, seq)
  std::vector<std::unique_ptr<AgentState>> agents_;
  std::unordered_map<AgentId, std::size_t> index_;
  std::unordered_map<std::string, Post> posts_;
  std::unordered_map<std::string, std::pair<std::int64_t, std::int64_t>> engagement_;  // likes, reposts
  std::map<std::string, json> narratives_;
  std::map<std::string, std::int64_t> next_handle_index_;
  Rng env_rng_;
  Rng spawn_rng_;
  Sampler sampler_;
  std::vector<std::string> recent_topics_;

  std::deque<InboundItem> intake_;
  mutable std::mutex completions_mutex_;
  std::condition_variable completions_cv_;
  std::deque<ActionDue> completions_;
  // Off-loop generations not yet applied, keyed by agent and decision time.
  std::map<std::string, ActionDue> pending_actions_;
  std::unique_ptr<GenerationPool> pool_;
  std::size_t in_flight_ = 0;

  bool verifying_ = false;
};

// Writes events.ndjson-style output: one line per stored event, then the
// log-hash footer.
void write_event_log(const std::vector<EventRow>& rows, std::ostream& out);

}  // namespace botverse
