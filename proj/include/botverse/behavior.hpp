#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "botverse/domain.hpp"
#include "botverse/memory.hpp"
#include "botverse/rng.hpp"

namespace botverse {

// Digital-DNA action alphabet.
enum class ActionCode : char {
  post = 'P',
  reply = 'R',
  repost = 'S',
  like = 'L',
  ingest_react = 'I',
  wait = 'W',
};

char to_char(ActionCode c);
ActionCode action_code_from_char(char c);
// "PWR" <-> {post, wait, reply}. Throws Error{InvalidSpec} on unknown letters.
std::vector<ActionCode> parse_dna(std::string_view letters);
std::string dna_string(const std::vector<ActionCode>& codes);
bool needs_target(ActionCode c);

// Relative weights over non-wait codes, used when a step mutates.
using ActionWeights = std::map<ActionCode, double>;

struct DnaProgram {
  std::vector<ActionCode> sequence;
  std::size_t position = 0;
  double mutation_rate = 0.05;
  ActionWeights mutation_weights;

  bool operator==(const DnaProgram&) const = default;
};

void validate(const DnaProgram& p);
json to_json(const DnaProgram& p);
DnaProgram dna_program_from_json(const json& j);

struct LogNormal {
  double mu = 0.0;
  double sigma = 1.0;
  bool operator==(const LogNormal&) const = default;
};

constexpr double kMinCircadian = 0.02;

struct TemporalModel {
  double base_rate = 6.0;              // sessions per virtual day at peak-normalized rate
  std::array<double, 24> circadian{};  // hourly multipliers, max == 1
  LogNormal session_len;               // actions per session
  LogNormal intra_gap;                 // seconds between actions in a session

  bool operator==(const TemporalModel&) const = default;
};

// Bimodal daily curve: quiet nights, a midday bump and an evening peak.
std::array<double, 24> default_circadian();
// base_rate 6/day, median 4 actions per session, median 45 s intra-session gap.
TemporalModel default_temporal_model();

void validate(const TemporalModel& m);
json to_json(const TemporalModel& m);
TemporalModel temporal_model_from_json(const json& j);

int hour_of_day(VirtualTime t);

// Next arrival of the circadian-modulated Poisson session process, by
// thinning against the peak rate. Always strictly after `now`.
VirtualTime next_session_start(VirtualTime now, const TemporalModel& model, Rng& rng);

struct TimedAction {
  ActionCode code;
  VirtualTime at;
  bool operator==(const TimedAction&) const = default;
};

// One burst of activity. Steps the cyclic program, skipping W codes; every W
// skipped adds one more intra-gap draw before the next emitted action.
std::vector<TimedAction> sample_session(DnaProgram& program, const TemporalModel& model,
                                        VirtualTime start, Rng& rng);

struct ActionDecision {
  ActionCode code = ActionCode::post;
  std::optional<std::string> target;
  VirtualTime at;

  bool operator==(const ActionDecision&) const = default;
};

struct TargetCandidate {
  std::string post_id;
  double score = 0.0;
  std::optional<std::string> narrative_id;
};

struct TargetBias {
  std::optional<std::string> active_narrative;
  double factor = 3.0;
};

// Samples a reply/repost/like target proportionally to memory score. Only the
// disinformative archetype applies the narrative bias.
std::optional<std::string> choose_target(ActionCode code, const std::vector<TargetCandidate>& feed,
                                         const Persona& persona, const TargetBias& bias, Rng& rng);

}  // namespace botverse
