#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "botverse/behavior.hpp"
#include "botverse/brain.hpp"
#include "botverse/domain.hpp"
#include "botverse/ingestion.hpp"
#include "botverse/memory.hpp"
#include "botverse/rng.hpp"

namespace botverse {

// A categorical pool: values drawn with the given relative weights (uniform
// when weights are empty). Integer ranges use min/max instead.
struct AttributePool {
  std::vector<json> values;
  std::vector<double> weights;
  std::optional<std::pair<int, int>> int_range;

  bool operator==(const AttributePool&) const = default;
};

struct PersonaGenerator {
  std::string handle_base;
  // Keyed by persona field name; "behavioral_traits.<key>" entries fill traits.
  std::map<std::string, AttributePool> pools;

  bool operator==(const PersonaGenerator&) const = default;
};

struct PopulationSpec {
  Archetype archetype = Archetype::benign;
  std::int64_t count = 0;
  PersonaGenerator persona;
  DnaProgram dna;
  TemporalModel temporal;
  MemoryParams memory;
  double target_bias = 3.0;
  double image_post_prob = 0.0;

  bool operator==(const PopulationSpec&) const = default;
};

struct AssigneePolicy {
  std::optional<Archetype> archetype;  // all agents of this archetype
  std::vector<AgentId> agents;         // or a named set

  bool operator==(const AssigneePolicy&) const = default;
};

json to_json(const AssigneePolicy& p);
AssigneePolicy assignee_policy_from_json(const json& j);

struct ScheduledNarrative {
  VirtualTime at;
  std::string narrative_id;
  std::string text;  // "{topic}" is filled from the latest ingested topic
  AssigneePolicy assignees;

  bool operator==(const ScheduledNarrative&) const = default;
};

struct ScenarioConfig {
  std::string name;
  VirtualTime duration;
  int start_hour = 0;  // hour of day at virtual time 0
  std::vector<PopulationSpec> populations;
  StreamConfig ingestion;
  std::vector<ScheduledNarrative> narratives;
  std::int64_t attention_sample = 50;
  std::int64_t ingest_fanout = 5;
  std::int64_t context_k = 5;
  std::int64_t target_k = 10;
  std::int64_t checkpoint_every = 10'000;
  std::optional<std::uint64_t> seed;
  std::string brain = "stub";  // "stub" or a backend name
  std::vector<BackendDescriptor> backends;
  DecodeTable decode = default_decode_table();
  json raw;  // the document as parsed, for hashing and run metadata
};

// Throws Error{InvalidScenario} with a field path such as
// "populations[1].persona.gender.weights".
ScenarioConfig scenario_from_json(const json& j, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);
void validate(const ScenarioConfig& c);
std::string scenario_hash(const ScenarioConfig& c);

PopulationSpec population_from_json(const json& j, const std::string& path = "population");

// "90s", "30m", "6h", "7d" or an integer number of milliseconds.
VirtualTime parse_duration(const json& j);

struct AgentSpec {
  Persona persona;
  DnaProgram dna;
  TemporalModel temporal;
  MemoryParams memory;
  double target_bias = 3.0;
  double image_post_prob = 0.0;

  bool operator==(const AgentSpec&) const = default;
};

json to_json(const AgentSpec& a);
AgentSpec agent_spec_from_json(const json& j);

// Deterministic given rng. Handles are "<base>_<n>" with n counting from
// `first_index`; per-population counters let spawned agents continue a
// sequence.
std::vector<AgentSpec> generate_population(const PopulationSpec& spec, Rng& rng, std::int64_t first_index = 1);
std::vector<AgentSpec> generate_population(const std::vector<PopulationSpec>& specs, Rng& rng);

// The circadian curve re-indexed so that virtual hour 0 is `start_hour`.
TemporalModel shifted(const TemporalModel& m, int start_hour);

}  // namespace botverse
