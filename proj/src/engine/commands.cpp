#include <cmath>
#include <string>

#include "botverse/engine.hpp"
#include "botverse/errors.hpp"

namespace botverse {

namespace {

[[noreturn]] void bad(const std::string& why) { throw Error(ErrorCode::InvalidCommand, why); }

const std::pair<ControlCommand::Kind, const char*> kKindNames[] = {
    {ControlCommand::Kind::pause, "pause"},
    {ControlCommand::Kind::resume, "resume"},
    {ControlCommand::Kind::set_pacing, "set_pacing"},
    {ControlCommand::Kind::inject_narrative, "inject_narrative"},
    {ControlCommand::Kind::spawn_agents, "spawn_agents"},
    {ControlCommand::Kind::patch_memory_params, "patch_memory_params"},
};

json selector_to_json(const AgentSelector& s) {
  if (s.all) return "all";
  if (s.archetype) return json{{"archetype", std::string(to_string(*s.archetype))}};
  json ids = json::array();
  for (const auto& a : s.agents) ids.push_back(a.value);
  return json{{"agents", ids}};
}

AgentSelector selector_from_json(const json& j) {
  AgentSelector s;
  if (j.is_string()) {
    if (j == "all") {
      s.all = true;
      return s;
    }
    s.agents.push_back(AgentId{j.get<std::string>()});
    return s;
  }
  if (!j.is_object()) bad("selector: expected \"all\" or an object");
  if (j.contains("agent")) {
    s.agents.push_back(AgentId{j.at("agent").get<std::string>()});
  } else if (j.contains("agents")) {
    for (const auto& id : j.at("agents")) s.agents.push_back(AgentId{id.get<std::string>()});
    if (s.agents.empty()) bad("selector.agents: empty");
  } else if (j.contains("archetype")) {
    s.archetype = archetype_from_string(j.at("archetype").get<std::string>());
  } else {
    bad("selector: expected agent, agents or archetype");
  }
  return s;
}

}  // namespace

json to_json(const PacingMode& p) {
  if (p.kind == PacingMode::Kind::free_run) return json{{"mode", "free_run"}};
  return json{{"mode", "scaled"}, {"factor", p.factor}};
}

PacingMode pacing_from_json(const json& j) {
  if (j.is_string()) return parse_pacing(j.get<std::string>());
  if (!j.is_object()) bad("pacing: expected object");
  PacingMode p;
  const std::string mode = j.value("mode", std::string());
  if (mode == "free_run") return p;
  if (mode != "scaled") bad("pacing.mode: expected free_run or scaled");
  p.kind = PacingMode::Kind::scaled;
  if (!j.contains("factor") || !j.at("factor").is_number()) bad("pacing.factor: expected number");
  p.factor = j.at("factor").get<double>();
  if (!(p.factor > 0.0) || !std::isfinite(p.factor)) bad("pacing.factor: must be > 0");
  return p;
}

PacingMode parse_pacing(std::string_view text) {
  if (text == "free_run" || text == "free") return PacingMode{};
  constexpr std::string_view prefix = "scaled:";
  if (text.substr(0, prefix.size()) != prefix) bad("pacing: expected free_run or scaled:<factor>");
  PacingMode p;
  p.kind = PacingMode::Kind::scaled;
  try {
    std::size_t used = 0;
    const std::string num(text.substr(prefix.size()));
    p.factor = std::stod(num, &used);
    if (used != num.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    bad("pacing: bad factor in '" + std::string(text) + "'");
  }
  if (!(p.factor > 0.0) || !std::isfinite(p.factor)) bad("pacing.factor: must be > 0");
  return p;
}

std::string_view to_string(ControlCommand::Kind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "unknown";
}

std::string_view to_string(EngineStatus s) {
  switch (s) {
    case EngineStatus::paused: return "paused";
    case EngineStatus::running: return "running";
    case EngineStatus::finished: return "finished";
  }
  return "unknown";
}

json to_json(const ControlCommand& c) {
  json j = {{"type", std::string(to_string(c.kind))}};
  switch (c.kind) {
    case ControlCommand::Kind::pause:
    case ControlCommand::Kind::resume: break;
    case ControlCommand::Kind::set_pacing: j["pacing"] = to_json(c.pacing); break;
    case ControlCommand::Kind::inject_narrative:
      j["narrative_id"] = c.narrative_id;
      j["text"] = c.text;
      j["assignees"] = to_json(c.assignees);
      if (c.reusable) j["reusable"] = true;
      break;
    case ControlCommand::Kind::spawn_agents: j["population"] = c.population; break;
    case ControlCommand::Kind::patch_memory_params:
      j["selector"] = selector_to_json(c.selector);
      j["patch"] = c.memory_patch;
      break;
  }
  return j;
}

ControlCommand control_command_from_json(const json& j) {
  if (!j.is_object()) bad("command must be a JSON object");
  auto type = j.find("type");
  if (type == j.end() || !type->is_string()) bad("missing command type");
  ControlCommand c;
  bool known = false;
  for (const auto& [kind, name] : kKindNames)
    if (*type == name) {
      c.kind = kind;
      known = true;
    }
  if (!known) bad("unknown command type '" + type->get<std::string>() + "'");

  try {
    switch (c.kind) {
      case ControlCommand::Kind::pause:
      case ControlCommand::Kind::resume: break;
      case ControlCommand::Kind::set_pacing:
        if (!j.contains("pacing")) bad("set_pacing: missing pacing");
        c.pacing = pacing_from_json(j.at("pacing"));
        break;
      case ControlCommand::Kind::inject_narrative:
        c.narrative_id = j.at("narrative_id").get<std::string>();
        if (c.narrative_id.empty()) bad("inject_narrative: empty narrative_id");
        c.text = j.value("text", std::string());
        c.assignees = assignee_policy_from_json(j.value("assignees", json{{"archetype", "disinformative"}}));
        c.reusable = j.value("reusable", false);
        break;
      case ControlCommand::Kind::spawn_agents:
        if (!j.contains("population")) bad("spawn_agents: missing population");
        c.population = j.at("population");
        population_from_json(c.population, "population");
        break;
      case ControlCommand::Kind::patch_memory_params:
        c.selector = selector_from_json(j.value("selector", json("all")));
        c.memory_patch = j.value("patch", json::object());
        if (!c.memory_patch.is_object() || c.memory_patch.empty()) bad("patch_memory_params: empty patch");
        patched(MemoryParams{}, c.memory_patch);
        break;
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidCommand) throw;
    bad(std::string(to_string(e.code())) + ": " + e.detail());
  } catch (const json::exception& e) {
    bad(e.what());
  }
  return c;
}

std::string_view event_type(const EventPayload& p) {
  struct {
    std::string_view operator()(const AgentWake&) const { return "agent_wake"; }
    std::string_view operator()(const ActionDue&) const { return "action_due"; }
    std::string_view operator()(const ExternalIngest&) const { return "external_ingest"; }
    std::string_view operator()(const ControlEvent&) const { return "control"; }
  } v;
  return std::visit(v, p);
}

json to_json(const SimEvent& e) {
  json j = {{"at", e.at.ms}, {"seq", e.seq}, {"type", std::string(event_type(e.payload))}};
  if (e.inbound) j["src"] = "in";
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AgentWake>) {
          j["agent"] = p.agent.value;
        } else if constexpr (std::is_same_v<T, ActionDue>) {
          j["agent"] = p.agent.value;
          json d = {{"code", std::string(1, to_char(p.decision.code))}, {"at", p.decision.at.ms}};
          if (p.decision.target) d["target"] = *p.decision.target;
          j["decision"] = d;
          if (p.completion) j["completion"] = *p.completion;
        } else if constexpr (std::is_same_v<T, ExternalIngest>) {
          j["post"] = to_json(p.post);
        } else {
          j["command_id"] = p.command_id;
          j["command"] = to_json(p.command);
        }
      },
      e.payload);
  return j;
}

SimEvent sim_event_from_json(const json& j) {
  SimEvent e;
  e.at = VirtualTime{j.at("at").get<std::int64_t>()};
  e.seq = j.at("seq").get<std::uint64_t>();
  e.inbound = j.value("src", std::string()) == "in";
  const std::string type = j.at("type").get<std::string>();
  if (type == "agent_wake") {
    e.payload = AgentWake{AgentId{j.at("agent").get<std::string>()}};
  } else if (type == "action_due") {
    ActionDue a;
    a.agent = AgentId{j.at("agent").get<std::string>()};
    const auto& d = j.at("decision");
    a.decision.code = action_code_from_char(d.at("code").get<std::string>().at(0));
    a.decision.at = VirtualTime{d.at("at").get<std::int64_t>()};
    if (d.contains("target")) a.decision.target = d.at("target").get<std::string>();
    if (j.contains("completion")) a.completion = j.at("completion");
    e.payload = std::move(a);
  } else if (type == "external_ingest") {
    e.payload = ExternalIngest{external_post_from_json(j.at("post"))};
  } else if (type == "control") {
    e.payload = ControlEvent{j.at("command_id").get<std::uint64_t>(), control_command_from_json(j.at("command"))};
  } else {
    throw Error(ErrorCode::MalformedJson, "unknown event type '" + type + "'");
  }
  return e;
}

}  // namespace botverse
