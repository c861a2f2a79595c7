#include "botverse/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "botverse/errors.hpp"
#include "botverse/hash.hpp"

namespace botverse {

namespace {

[[noreturn]] void invalid(const std::string& path, const std::string& why) {
  throw Error(ErrorCode::InvalidScenario, path + ": " + why);
}

// Runs `f`, re-raising any library error as InvalidScenario at `path`.
template <typename F>
auto at_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidScenario) throw;
    invalid(path, e.detail());
  } catch (const json::exception& e) {
    invalid(path, e.what());
  }
}

AttributePool pool_from_json(const json& j, const std::string& path) {
  AttributePool p;
  if (j.is_array()) {
    p.values = j.get<std::vector<json>>();
  } else if (j.is_object() && (j.contains("min") || j.contains("max"))) {
    if (!j.contains("min") || !j.contains("max")) invalid(path, "range needs min and max");
    const int lo = at_path(path + ".min", [&] { return j.at("min").get<int>(); });
    const int hi = at_path(path + ".max", [&] { return j.at("max").get<int>(); });
    if (lo > hi) invalid(path, "min > max");
    p.int_range = {lo, hi};
    return p;
  } else if (j.is_object()) {
    if (!j.contains("values")) invalid(path, "expected values");
    p.values = at_path(path + ".values", [&] { return j.at("values").get<std::vector<json>>(); });
    if (j.contains("weights"))
      p.weights = at_path(path + ".weights", [&] { return j.at("weights").get<std::vector<double>>(); });
  } else {
    p.values = {j};
  }
  if (p.values.empty()) invalid(path + ".values", "pool is empty");
  if (!p.weights.empty()) {
    if (p.weights.size() != p.values.size()) invalid(path + ".weights", "length differs from values");
    double total = 0.0;
    for (double w : p.weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) invalid(path + ".weights", "weights must be finite and >= 0");
      total += w;
    }
    if (!(total > 0.0)) invalid(path + ".weights", "weights sum to zero");
  }
  return p;
}

json draw(const AttributePool& p, Rng& rng) {
  if (p.int_range) {
    const auto span = static_cast<std::uint64_t>(p.int_range->second - p.int_range->first) + 1;
    return p.int_range->first + static_cast<int>(rng.below(span));
  }
  if (p.values.size() == 1) return p.values.front();
  if (p.weights.empty()) return p.values[rng.below(p.values.size())];
  const double total = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    if (u < p.weights[i]) return p.values[i];
    u -= p.weights[i];
  }
  return p.values.back();
}

std::string default_dna(Archetype a) {
  // Benign accounts mostly read and like; bots post and amplify.
  return a == Archetype::benign ? "PLLRWLSLI" : "PSRPLSIR";
}

TemporalModel default_temporal(Archetype a) {
  TemporalModel m = default_temporal_model();
  if (a == Archetype::disinformative) m.base_rate = 24.0;
  return m;
}

std::string format_handle(const std::string& base, std::int64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03lld", static_cast<long long>(n));
  return base + "_" + buf;
}

}  // namespace

VirtualTime parse_duration(const json& j) {
  if (j.is_number_integer()) {
    const auto ms = j.get<std::int64_t>();
    if (ms < 0) throw Error(ErrorCode::OutOfRange, "duration must be >= 0");
    return VirtualTime{ms};
  }
  if (!j.is_string()) throw Error(ErrorCode::MalformedJson, "duration: expected \"<n><s|m|h|d>\" or integer ms");
  static const std::regex re(R"(^\s*([0-9]+(?:\.[0-9]+)?)\s*(ms|s|m|h|d)\s*$)");
  std::smatch m;
  const std::string s = j.get<std::string>();
  if (!std::regex_match(s, m, re)) throw Error(ErrorCode::MalformedJson, "duration: cannot parse '" + s + "'");
  const double v = std::stod(m[1]);
  const std::string unit = m[2];
  const double scale = unit == "ms" ? 1.0
                       : unit == "s" ? 1000.0
                       : unit == "m" ? 60'000.0
                       : unit == "h" ? static_cast<double>(kMsPerHour)
                                     : static_cast<double>(kMsPerDay);
  return VirtualTime{std::llround(v * scale)};
}

json to_json(const AssigneePolicy& p) {
  if (p.archetype) return json{{"archetype", std::string(to_string(*p.archetype))}};
  json ids = json::array();
  for (const auto& a : p.agents) ids.push_back(a.value);
  return json{{"agents", ids}};
}

AssigneePolicy assignee_policy_from_json(const json& j) {
  AssigneePolicy p;
  if (j.is_string()) {
    p.archetype = archetype_from_string(j.get<std::string>());
    return p;
  }
  if (!j.is_object()) throw Error(ErrorCode::MalformedJson, "assignees: expected object");
  if (j.contains("archetype") == j.contains("agents"))
    throw Error(ErrorCode::MalformedJson, "assignees: give exactly one of archetype or agents");
  if (j.contains("archetype")) {
    p.archetype = archetype_from_string(j.at("archetype").get<std::string>());
  } else {
    for (const auto& id : j.at("agents")) p.agents.push_back(AgentId{id.get<std::string>()});
    if (p.agents.empty()) throw Error(ErrorCode::MalformedJson, "assignees.agents: empty");
  }
  return p;
}

PopulationSpec population_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) invalid(path, "expected object");
  PopulationSpec p;
  if (!j.contains("archetype")) invalid(path + ".archetype", "missing");
  p.archetype = at_path(path + ".archetype", [&] { return archetype_from_string(j.at("archetype").get<std::string>()); });
  p.count = at_path(path + ".count", [&] { return j.value("count", std::int64_t{0}); });
  if (p.count < 0) invalid(path + ".count", "must be >= 0");

  p.persona.handle_base = at_path(path + ".handle_base",
                                  [&] { return j.value("handle_base", std::string(to_string(p.archetype))); });
  if (p.persona.handle_base.empty()) invalid(path + ".handle_base", "empty");
  if (auto it = j.find("persona"); it != j.end()) {
    if (!it->is_object()) invalid(path + ".persona", "expected object");
    for (const auto& [key, value] : it->items()) {
      const std::string field_path = path + ".persona." + key;
      if (key == "behavioral_traits" || key == "traits") {
        if (!value.is_object()) invalid(field_path, "expected object");
        for (const auto& [trait, pool] : value.items())
          p.persona.pools["behavioral_traits." + trait] = pool_from_json(pool, field_path + "." + trait);
      } else if (key == "handle" || key == "archetype") {
        invalid(field_path, "set by the generator");
      } else {
        const std::string name = key == "political" ? "political_orientation" : key == "religion" ? "religious_orientation" : key;
        p.persona.pools[name] = pool_from_json(value, field_path);
      }
    }
  }

  p.dna = at_path(path + ".dna", [&] {
    json dna = j.value("dna", json::object());
    if (dna.is_string()) dna = json{{"sequence", dna}};
    if (!dna.contains("sequence")) dna["sequence"] = default_dna(p.archetype);
    return dna_program_from_json(dna);
  });
  p.temporal = at_path(path + ".temporal", [&] {
    TemporalModel m = default_temporal(p.archetype);
    if (auto it = j.find("temporal"); it != j.end()) {
      json t = *it;
      if (!t.contains("base_rate")) t["base_rate"] = m.base_rate;
      m = temporal_model_from_json(t);
    }
    validate(m);
    return m;
  });
  p.memory = at_path(path + ".memory", [&] { return memory_params_from_json(j.value("memory", json::object())); });
  p.target_bias = at_path(path + ".target_bias", [&] { return j.value("target_bias", 3.0); });
  if (!(p.target_bias >= 1.0) || !std::isfinite(p.target_bias)) invalid(path + ".target_bias", "must be >= 1");
  p.image_post_prob = at_path(path + ".image_post_prob", [&] { return j.value("image_post_prob", 0.0); });
  if (!(p.image_post_prob >= 0.0 && p.image_post_prob <= 1.0)) invalid(path + ".image_post_prob", "must be in [0,1]");
  return p;
}

ScenarioConfig scenario_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) invalid("$", "scenario must be a JSON object");
  ScenarioConfig c;
  c.raw = j;
  c.name = at_path("name", [&] { return j.value("name", std::string("scenario")); });
  if (!j.contains("duration")) invalid("duration", "missing");
  c.duration = at_path("duration", [&] { return parse_duration(j.at("duration")); });
  c.start_hour = at_path("start_hour", [&] { return j.value("start_hour", 0); });
  if (j.contains("seed") && !j.at("seed").is_null())
    c.seed = at_path("seed", [&] { return j.at("seed").get<std::uint64_t>(); });

  auto read_count = [&](const char* key, std::int64_t& out) {
    out = at_path(key, [&] { return j.value(key, out); });
  };
  read_count("attention_sample", c.attention_sample);
  read_count("ingest_fanout", c.ingest_fanout);
  read_count("context_k", c.context_k);
  read_count("target_k", c.target_k);
  read_count("checkpoint_every", c.checkpoint_every);

  if (auto it = j.find("populations"); it != j.end()) {
    if (!it->is_array()) invalid("populations", "expected array");
    for (std::size_t i = 0; i < it->size(); ++i)
      c.populations.push_back(population_from_json(it->at(i), "populations[" + std::to_string(i) + "]"));
  }

  if (auto it = j.find("ingestion"); it != j.end() && !it->is_null()) {
    c.ingestion = at_path("ingestion", [&] { return stream_config_from_json(*it); });
    if (c.ingestion.mode == StreamMode::replay && c.ingestion.replay_path.is_relative() && !base_dir.empty())
      c.ingestion.replay_path = base_dir / c.ingestion.replay_path;
  }

  if (auto it = j.find("narratives"); it != j.end()) {
    if (!it->is_array()) invalid("narratives", "expected array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string path = "narratives[" + std::to_string(i) + "]";
      const json& n = it->at(i);
      if (!n.is_object()) invalid(path, "expected object");
      ScheduledNarrative s;
      s.at = at_path(path + ".at", [&] { return parse_duration(n.value("at", json(0))); });
      if (!n.contains("narrative_id")) invalid(path + ".narrative_id", "missing");
      s.narrative_id = at_path(path + ".narrative_id", [&] { return n.at("narrative_id").get<std::string>(); });
      s.text = at_path(path + ".text", [&] { return n.value("text", std::string()); });
      s.assignees = at_path(path + ".assignees", [&] {
        return assignee_policy_from_json(n.value("assignees", json{{"archetype", "disinformative"}}));
      });
      c.narratives.push_back(std::move(s));
    }
  }

  c.brain = at_path("brain", [&] { return j.value("brain", std::string("stub")); });
  if (auto it = j.find("backends"); it != j.end()) {
    if (!it->is_array()) invalid("backends", "expected array");
    for (std::size_t i = 0; i < it->size(); ++i)
      c.backends.push_back(at_path("backends[" + std::to_string(i) + "]", [&] { return backend_from_json(it->at(i)); }));
  }
  if (auto it = j.find("decode"); it != j.end()) {
    if (!it->is_object()) invalid("decode", "expected object");
    for (const auto& [task, params] : it->items()) {
      const std::string path = "decode." + task;
      const TaskKind kind = at_path(path, [&] { return task_kind_from_string(task); });
      DecodeParams& d = c.decode[kind];
      d.temperature = at_path(path + ".temperature", [&] { return params.value("temperature", d.temperature); });
      d.max_tokens = at_path(path + ".max_tokens", [&] { return params.value("max_tokens", d.max_tokens); });
    }
  }
  validate(c);
  return c;
}

void validate(const ScenarioConfig& c) {
  if (c.duration.ms <= 0) invalid("duration", "must be positive");
  if (c.start_hour < 0 || c.start_hour > 23) invalid("start_hour", "must be in 0..23");
  if (c.attention_sample <= 0) invalid("attention_sample", "must be positive");
  if (c.ingest_fanout <= 0) invalid("ingest_fanout", "must be positive");
  if (c.context_k <= 0) invalid("context_k", "must be positive");
  if (c.target_k <= 0) invalid("target_k", "must be positive");
  if (c.checkpoint_every <= 0) invalid("checkpoint_every", "must be positive");

  std::set<std::string> bases;
  for (std::size_t i = 0; i < c.populations.size(); ++i) {
    const auto& p = c.populations[i];
    if (p.count < 0) invalid("populations[" + std::to_string(i) + "].count", "must be >= 0");
    if (!bases.insert(p.persona.handle_base).second)
      invalid("populations[" + std::to_string(i) + "].handle_base", "duplicate '" + p.persona.handle_base + "'");
  }

  std::set<std::string> ids;
  for (std::size_t i = 0; i < c.narratives.size(); ++i) {
    const auto& n = c.narratives[i];
    const std::string path = "narratives[" + std::to_string(i) + "]";
    if (n.narrative_id.empty()) invalid(path + ".narrative_id", "empty");
    if (!ids.insert(n.narrative_id).second) invalid(path + ".narrative_id", "duplicate '" + n.narrative_id + "'");
    if (c.duration < n.at) invalid(path + ".at", "after the scenario duration");
  }

  for (const auto& d : c.decode)
    if (!(d.second.temperature >= 0.0) || d.second.max_tokens <= 0)
      invalid("decode." + std::string(to_string(d.first)), "temperature >= 0 and max_tokens > 0 required");

  if (c.brain != "stub") {
    bool found = false;
    for (const auto& b : c.backends) found = found || b.name == c.brain;
    if (!found) invalid("brain", "no backend named '" + c.brain + "'");
  }
  at_path("ingestion", [&] {
    validate(c.ingestion, true);
    return 0;
  });
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open scenario " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const json j = json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::InvalidScenario, "$: malformed JSON in " + path.string());
  return scenario_from_json(j, path.parent_path());
}

std::string scenario_hash(const ScenarioConfig& c) { return sha256_hex(canonical(c.raw)); }

json to_json(const AgentSpec& a) {
  return json{{"persona", persona_to_json(a.persona)},
              {"dna", to_json(a.dna)},
              {"temporal", to_json(a.temporal)},
              {"memory_params", to_json(a.memory)},
              {"target_bias", a.target_bias},
              {"image_post_prob", a.image_post_prob}};
}

AgentSpec agent_spec_from_json(const json& j) {
  AgentSpec a;
  a.persona = persona_from_json(j.at("persona"));
  a.dna = dna_program_from_json(j.at("dna"));
  a.temporal = temporal_model_from_json(j.at("temporal"));
  a.memory = memory_params_from_json(j.at("memory_params"));
  a.target_bias = j.value("target_bias", 3.0);
  a.image_post_prob = j.value("image_post_prob", 0.0);
  return a;
}

std::vector<AgentSpec> generate_population(const PopulationSpec& spec, Rng& rng, std::int64_t first_index) {
  std::vector<AgentSpec> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (std::int64_t i = 0; i < spec.count; ++i) {
    json persona = {{"handle", format_handle(spec.persona.handle_base, first_index + i)},
                    {"archetype", std::string(to_string(spec.archetype))}};
    json traits = json::object();
    for (const auto& [field, pool] : spec.persona.pools) {
      json v = draw(pool, rng);
      if (field.rfind("behavioral_traits.", 0) == 0)
        traits[field.substr(18)] = v.is_string() ? v : json(v.dump());
      else
        persona[field] = std::move(v);
    }
    if (!traits.empty()) persona["behavioral_traits"] = traits;
    AgentSpec a;
    a.persona = at_path("persona." + persona["handle"].get<std::string>(), [&] { return validate_persona(persona); });
    a.dna = spec.dna;
    a.temporal = spec.temporal;
    a.memory = spec.memory;
    a.target_bias = spec.target_bias;
    a.image_post_prob = spec.image_post_prob;
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<AgentSpec> generate_population(const std::vector<PopulationSpec>& specs, Rng& rng) {
  std::vector<AgentSpec> out;
  for (const auto& s : specs) {
    auto part = generate_population(s, rng);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

TemporalModel shifted(const TemporalModel& m, int start_hour) {
  TemporalModel out = m;
  for (int h = 0; h < 24; ++h) out.circadian[h] = m.circadian[(h + start_hour) % 24];
  return out;
}

}  // namespace botverse
