#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "botverse/domain.hpp"
#include "botverse/scenario.hpp"
#include "botverse/store.hpp"

namespace botverse {

// Everything a report is computed from. Loadable from a store or from the
// files a run writes to its out_dir.
struct RunRecord {
  std::vector<AgentRecord> agents;
  std::vector<Post> posts;  // insertion order
  std::vector<Interaction> interactions;
  std::vector<EventRow> events;
};

RunRecord read_run(const Store& store);
// Reads agents.ndjson, posts.ndjson, interactions.ndjson and events.ndjson.
// Throws Error{Io, MalformedLine}.
RunRecord read_run(const std::filesystem::path& out_dir);

struct Cascade {
  std::string root;
  std::int64_t size = 0;
  std::int64_t depth = 0;  // nodes on the longest root-to-leaf path
  std::vector<std::string> posts;  // preorder, children by post order
};

json to_json(const Cascade& c);

// Trees over reply/repost links whose parent carries the same narrative.
// Ordered by root post. Throws Error{UnknownNarrative} if no post carries the
// tag and no injection registered it.
std::vector<Cascade> compute_cascades(const RunRecord& run, const std::string& narrative_id);
std::vector<Cascade> compute_cascades(const Store& store, const std::string& narrative_id);

struct NarrativeReport {
  std::string narrative_id;
  std::int64_t tagged_posts = 0;
  std::int64_t reach = 0;     // distinct agents authoring or interacting with tagged posts
  std::int64_t adoption = 0;  // distinct benign agents replying to or reposting tagged posts
  std::int64_t cascade_count = 0;
  std::int64_t max_cascade_depth = 0;
  std::map<std::int64_t, std::int64_t> size_distribution;   // size -> cascades
  std::map<std::int64_t, std::int64_t> depth_distribution;  // depth -> cascades
};

struct TrajectoryPoint {
  VirtualTime at;
  std::string code;
  std::string status;
  std::optional<std::string> memory_top_narrative;
  std::optional<std::string> post_id;
};

struct GraphSummary {
  std::int64_t nodes = 0;
  std::int64_t edges = 0;           // interactions between agents
  std::int64_t distinct_pairs = 0;  // ordered (actor, author) pairs
  std::map<std::int64_t, std::int64_t> degree_distribution;  // undirected degree -> agents
};

struct DiffusionReport {
  std::int64_t agents = 0;
  std::int64_t posts = 0;
  std::int64_t interactions = 0;
  std::int64_t events = 0;
  std::string log_hash;
  std::vector<NarrativeReport> narratives;
  std::map<std::string, std::vector<TrajectoryPoint>> trajectories;
  GraphSummary graph;
};

json to_json(const DiffusionReport& r);
DiffusionReport compute_report(const RunRecord& run);

// Narratives registered by accepted injections, in log order.
std::vector<std::string> injected_narratives(const std::vector<EventRow>& events);

// source_agent,target_agent,kind,virtual_time_ms,target_post,produced_post,
// target_narrative,produced_narrative
void write_edge_csv(const RunRecord& run, std::ostream& out);
// virtual_time_ms,agent,code,status,target,post_id,memory_top_narrative
void write_actions_csv(const RunRecord& run, std::ostream& out);

// Writes events.ndjson (with log-hash footer), posts.ndjson,
// interactions.ndjson, agents.ndjson, graph.csv, actions.csv and report.json.
void export_run(const RunRecord& run, const DiffusionReport& report, const std::filesystem::path& out_dir);

// Stub, or the HTTP backend named by `brain` (with env overrides applied).
std::shared_ptr<TextGenerator> make_generator(const ScenarioConfig& config);

struct RunOutcome {
  DiffusionReport report;
  std::string log_hash;
  std::uint64_t events = 0;
};

// Headless run: init (or resume from the store's latest checkpoint), run to
// the scenario duration in free-run, then compute the report from the store.
// Exports to out_dir when given.
RunOutcome run_scenario(const ScenarioConfig& config, std::uint64_t seed, Store& store,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                        bool resume = false);

}  // namespace botverse
