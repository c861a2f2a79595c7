#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace botverse {

using json = nlohmann::json;

// Milliseconds since the simulation epoch.
struct VirtualTime {
  std::int64_t ms = 0;

  static constexpr VirtualTime from_seconds(double s) {
    return VirtualTime{static_cast<std::int64_t>(s * 1000.0)};
  }
  constexpr double seconds() const { return static_cast<double>(ms) / 1000.0; }

  auto operator<=>(const VirtualTime&) const = default;
};

constexpr std::int64_t kMsPerHour = 3'600'000;
constexpr std::int64_t kMsPerDay = 24 * kMsPerHour;

struct AgentId {
  std::string value;

  auto operator<=>(const AgentId&) const = default;
};

enum class Archetype { benign, disinformative };

std::string_view to_string(Archetype a);
Archetype archetype_from_string(std::string_view s);

struct Persona {
  std::string handle;
  std::optional<int> age;
  std::optional<std::string> gender;
  std::optional<std::string> location;
  std::optional<std::string> political_orientation;
  std::optional<std::string> religious_orientation;
  std::optional<std::string> education;
  std::map<std::string, std::string> behavioral_traits;
  Archetype archetype = Archetype::benign;
  // Keys outside the known schema, carried through untouched.
  json extra = json::object();

  bool operator==(const Persona&) const = default;
};

constexpr int kMinPersonaAge = 13;
constexpr int kMaxPersonaAge = 120;

// Typed view of a raw JSON profile. Throws Error{MissingField, OutOfRange,
// MalformedJson}.
Persona validate_persona(const json& raw);
Persona validate_persona_text(std::string_view text);
json persona_to_json(const Persona& p);
// Exact inverse of persona_to_json: traits are taken as stored, without
// archetype defaults merged in.
Persona persona_from_json(const json& j);

// Default traits for an archetype; explicit traits in a profile override these.
std::map<std::string, std::string> default_traits(Archetype a);

struct ExternalSource {
  std::string source_id;
  bool operator==(const ExternalSource&) const = default;
};

using Author = std::variant<AgentId, ExternalSource>;

struct Post {
  std::string post_id;
  Author author;
  std::string text;
  std::optional<std::string> image_prompt;
  std::optional<std::string> image_ref;
  VirtualTime created_at;
  std::optional<std::string> narrative_id;
  std::optional<std::string> in_reply_to;
  std::optional<std::string> repost_of;

  // The single parent, if any (at most one of in_reply_to / repost_of is set).
  const std::optional<std::string>& parent() const {
    return in_reply_to ? in_reply_to : repost_of;
  }
  std::string author_name() const;

  bool operator==(const Post&) const = default;
};

enum class InteractionKind { like, reply, repost };

std::string_view to_string(InteractionKind k);
InteractionKind interaction_kind_from_string(std::string_view s);

struct Interaction {
  InteractionKind kind = InteractionKind::like;
  AgentId actor;
  std::string target;
  VirtualTime at;
  std::optional<std::string> produced_post;

  bool operator==(const Interaction&) const = default;
};

struct ExternalPost {
  std::string source_id;
  std::string text;
  VirtualTime observed_at;
  std::optional<std::vector<std::string>> topics;

  bool operator==(const ExternalPost&) const = default;
};

// Structural checks shared by encoders and the store. Throw Error on failure.
void check_post(const Post& p);
void check_interaction(const Interaction& i);

json to_json(const Post& p);
json to_json(const Interaction& i);
json to_json(const ExternalPost& e);
Post post_from_json(const json& j);
Interaction interaction_from_json(const json& j);
ExternalPost external_post_from_json(const json& j);

// Canonical text encoding: sorted keys, compact, UTF-8.
std::string canonical(const json& j);

using PostLookup = std::function<std::optional<Post>(const std::string& post_id)>;

// Own narrative tag, else the nearest tagged ancestor along the reply/repost
// chain. Throws Error{DanglingReference} when an ancestor cannot be resolved.
std::optional<std::string> narrative_of(const Post& post, const PostLookup& lookup);

}  // namespace botverse

template <>
struct std::hash<botverse::AgentId> {
  std::size_t operator()(const botverse::AgentId& id) const noexcept {
    return std::hash<std::string>{}(id.value);
  }
};
