#include "botverse/domain.hpp"

#include <set>
#include <unordered_set>

#include "botverse/errors.hpp"

namespace botverse {

std::string_view to_string(Archetype a) {
  return a == Archetype::benign ? "benign" : "disinformative";
}

Archetype archetype_from_string(std::string_view s) {
  if (s == "benign") return Archetype::benign;
  if (s == "disinformative") return Archetype::disinformative;
  throw Error(ErrorCode::MalformedJson, "archetype: unknown value '" + std::string(s) + "'");
}

std::map<std::string, std::string> default_traits(Archetype a) {
  if (a == Archetype::benign) return {{"skepticism", "high"}};
  return {{"disinformation_propensity", "high"},
          {"persuasion_style", "long, persuasive reasoning"}};
}

namespace {

// Short aliases accepted on input and mapped to the canonical field names.
const std::map<std::string, std::string, std::less<>> kPersonaAliases = {
    {"political", "political_orientation"},
    {"religion", "religious_orientation"},
    {"traits", "behavioral_traits"},
};

const std::set<std::string, std::less<>> kPersonaKnown = {
    "handle",    "age",         "gender",                "location",
    "political_orientation",    "religious_orientation", "education",
    "behavioral_traits",        "archetype",
};

std::optional<std::string> opt_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw Error(ErrorCode::MalformedJson, std::string(key) + ": expected string");
  return it->get<std::string>();
}

std::string req_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) throw Error(ErrorCode::MissingField, key);
  if (!it->is_string()) throw Error(ErrorCode::MalformedJson, std::string(key) + ": expected string");
  return it->get<std::string>();
}

std::int64_t req_time(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(ErrorCode::MissingField, key);
  if (!it->is_number_integer()) throw Error(ErrorCode::MalformedJson, std::string(key) + ": expected integer ms");
  auto v = it->get<std::int64_t>();
  if (v < 0) throw Error(ErrorCode::OutOfRange, key);
  return v;
}

}  // namespace

Persona validate_persona(const json& raw) {
  if (!raw.is_object()) throw Error(ErrorCode::MalformedJson, "persona must be a JSON object");

  json obj = json::object();
  for (const auto& [key, value] : raw.items()) {
    auto alias = kPersonaAliases.find(key);
    const std::string& name = alias == kPersonaAliases.end() ? key : alias->second;
    if (alias != kPersonaAliases.end() && raw.contains(name)) continue;  // canonical wins
    obj[name] = value;
  }

  Persona p;
  p.handle = req_string(obj, "handle");
  if (p.handle.empty()) throw Error(ErrorCode::MissingField, "handle");

  if (auto it = obj.find("age"); it != obj.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw Error(ErrorCode::MalformedJson, "age: expected integer");
    auto age = it->get<std::int64_t>();
    if (age < kMinPersonaAge || age > kMaxPersonaAge) throw Error(ErrorCode::OutOfRange, "age");
    p.age = static_cast<int>(age);
  }
  p.gender = opt_string(obj, "gender");
  p.location = opt_string(obj, "location");
  p.political_orientation = opt_string(obj, "political_orientation");
  p.religious_orientation = opt_string(obj, "religious_orientation");
  p.education = opt_string(obj, "education");
  if (auto a = opt_string(obj, "archetype")) p.archetype = archetype_from_string(*a);

  p.behavioral_traits = default_traits(p.archetype);
  if (auto it = obj.find("behavioral_traits"); it != obj.end() && !it->is_null()) {
    if (!it->is_object()) throw Error(ErrorCode::MalformedJson, "behavioral_traits: expected object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string())
        throw Error(ErrorCode::MalformedJson, "behavioral_traits." + k + ": expected string");
      p.behavioral_traits[k] = v.get<std::string>();
    }
  }

  for (const auto& [key, value] : obj.items())
    if (!kPersonaKnown.contains(key)) p.extra[key] = value;
  return p;
}

Persona validate_persona_text(std::string_view text) {
  json raw = json::parse(text, nullptr, false);
  if (raw.is_discarded()) throw Error(ErrorCode::MalformedJson, "persona is not valid JSON");
  return validate_persona(raw);
}

Persona persona_from_json(const json& j) {
  Persona p = validate_persona(j);
  p.behavioral_traits.clear();
  if (auto it = j.find("behavioral_traits"); it != j.end() && it->is_object())
    for (const auto& [k, v] : it->items()) p.behavioral_traits[k] = v.get<std::string>();
  return p;
}

json persona_to_json(const Persona& p) {
  json j = p.extra.is_object() ? p.extra : json::object();
  j["handle"] = p.handle;
  if (p.age) j["age"] = *p.age;
  if (p.gender) j["gender"] = *p.gender;
  if (p.location) j["location"] = *p.location;
  if (p.political_orientation) j["political_orientation"] = *p.political_orientation;
  if (p.religious_orientation) j["religious_orientation"] = *p.religious_orientation;
  if (p.education) j["education"] = *p.education;
  j["behavioral_traits"] = p.behavioral_traits;
  j["archetype"] = std::string(to_string(p.archetype));
  return j;
}

std::string Post::author_name() const {
  if (const auto* a = std::get_if<AgentId>(&author)) return a->value;
  return "external:" + std::get<ExternalSource>(author).source_id;
}

std::string_view to_string(InteractionKind k) {
  switch (k) {
    case InteractionKind::like: return "like";
    case InteractionKind::reply: return "reply";
    case InteractionKind::repost: return "repost";
  }
  return "like";
}

InteractionKind interaction_kind_from_string(std::string_view s) {
  if (s == "like") return InteractionKind::like;
  if (s == "reply") return InteractionKind::reply;
  if (s == "repost") return InteractionKind::repost;
  throw Error(ErrorCode::MalformedJson, "interaction kind: '" + std::string(s) + "'");
}

void check_post(const Post& p) {
  if (p.post_id.empty()) throw Error(ErrorCode::MissingField, "post_id");
  if (p.in_reply_to && p.repost_of)
    throw Error(ErrorCode::IntegrityViolation, p.post_id + ": both in_reply_to and repost_of set");
  if (p.created_at.ms < 0) throw Error(ErrorCode::OutOfRange, "created_at");
}

void check_interaction(const Interaction& i) {
  const bool produces = i.kind != InteractionKind::like;
  if (produces != i.produced_post.has_value())
    throw Error(ErrorCode::IntegrityViolation,
                std::string(to_string(i.kind)) + " on " + i.target +
                    (produces ? ": missing produced_post" : ": like must not carry produced_post"));
  if (i.at.ms < 0) throw Error(ErrorCode::OutOfRange, "at");
}

json to_json(const Post& p) {
  json j;
  j["post_id"] = p.post_id;
  if (const auto* a = std::get_if<AgentId>(&p.author))
    j["author"] = a->value;
  else
    j["author"] = json{{"external", std::get<ExternalSource>(p.author).source_id}};
  j["text"] = p.text;
  j["created_at"] = p.created_at.ms;
  if (p.image_prompt) j["image_prompt"] = *p.image_prompt;
  if (p.image_ref) j["image_ref"] = *p.image_ref;
  if (p.narrative_id) j["narrative_id"] = *p.narrative_id;
  if (p.in_reply_to) j["in_reply_to"] = *p.in_reply_to;
  if (p.repost_of) j["repost_of"] = *p.repost_of;
  return j;
}

json to_json(const Interaction& i) {
  json j;
  j["kind"] = std::string(to_string(i.kind));
  j["actor"] = i.actor.value;
  j["target"] = i.target;
  j["at"] = i.at.ms;
  if (i.produced_post) j["produced_post"] = *i.produced_post;
  return j;
}

json to_json(const ExternalPost& e) {
  json j;
  j["source_id"] = e.source_id;
  j["text"] = e.text;
  j["observed_at"] = e.observed_at.ms;
  if (e.topics) j["topics"] = *e.topics;
  return j;
}

Post post_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::MalformedJson, "post must be an object");
  Post p;
  p.post_id = req_string(j, "post_id");
  const auto& author = j.at("author");
  if (author.is_string())
    p.author = AgentId{author.get<std::string>()};
  else if (author.is_object() && author.contains("external"))
    p.author = ExternalSource{author.at("external").get<std::string>()};
  else
    throw Error(ErrorCode::MalformedJson, "author");
  p.text = req_string(j, "text");
  p.created_at = VirtualTime{req_time(j, "created_at")};
  p.image_prompt = opt_string(j, "image_prompt");
  p.image_ref = opt_string(j, "image_ref");
  p.narrative_id = opt_string(j, "narrative_id");
  p.in_reply_to = opt_string(j, "in_reply_to");
  p.repost_of = opt_string(j, "repost_of");
  check_post(p);
  return p;
}

Interaction interaction_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::MalformedJson, "interaction must be an object");
  Interaction i;
  i.kind = interaction_kind_from_string(req_string(j, "kind"));
  i.actor = AgentId{req_string(j, "actor")};
  i.target = req_string(j, "target");
  i.at = VirtualTime{req_time(j, "at")};
  i.produced_post = opt_string(j, "produced_post");
  check_interaction(i);
  return i;
}

ExternalPost external_post_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::MalformedJson, "external post must be an object");
  ExternalPost e;
  e.source_id = req_string(j, "source_id");
  e.text = req_string(j, "text");
  e.observed_at = VirtualTime{req_time(j, "observed_at")};
  if (auto it = j.find("topics"); it != j.end() && !it->is_null())
    e.topics = it->get<std::vector<std::string>>();
  return e;
}

std::string canonical(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::optional<std::string> narrative_of(const Post& post, const PostLookup& lookup) {
  std::unordered_set<std::string> visited{post.post_id};
  const Post* current = &post;
  std::optional<Post> holder;
  while (true) {
    if (current->narrative_id) return current->narrative_id;
    const auto& parent = current->parent();
    if (!parent) return std::nullopt;
    if (!visited.insert(*parent).second)
      throw Error(ErrorCode::IntegrityViolation, "cycle through " + *parent);
    holder = lookup(*parent);
    if (!holder) throw Error(ErrorCode::DanglingReference, *parent);
    current = &*holder;
  }
}

}  // namespace botverse
