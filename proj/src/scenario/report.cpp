#include "botverse/report.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>

#include "botverse/engine.hpp"
#include "botverse/errors.hpp"
#include "botverse/hash.hpp"

namespace botverse {

namespace {

template <typename F>
void read_lines(const std::filesystem::path& path, F&& on_line) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::MalformedLine, path.filename().string() + ":" + std::to_string(n));
    try {
      on_line(j, line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedLine, path.filename().string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

std::string csv_field(const std::optional<std::string>& s) {
  if (!s) return "";
  if (s->find_first_of(",\"\n") == std::string::npos) return *s;
  std::string out = "\"";
  for (char c : *s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

using PostIndex = std::unordered_map<std::string, const Post*>;

PostIndex index_posts(const RunRecord& run) {
  PostIndex idx;
  for (const auto& p : run.posts) idx.emplace(p.post_id, &p);
  return idx;
}

std::optional<std::string> tag_of(const PostIndex& idx, const std::string& id) {
  auto it = idx.find(id);
  return it == idx.end() ? std::nullopt : it->second->narrative_id;
}

json dist_json(const std::map<std::int64_t, std::int64_t>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

}  // namespace

std::shared_ptr<TextGenerator> make_generator(const ScenarioConfig& c) {
  if (c.brain == "stub") return std::make_shared<StubGenerator>();
  for (const auto& b : c.backends)
    if (b.name == c.brain) return std::make_shared<HttpGenerator>(register_backend(with_env_overrides(b)));
  throw Error(ErrorCode::InvalidScenario, "brain: no backend named '" + c.brain + "'");
}

RunRecord read_run(const Store& store) {
  return RunRecord{store.agents(), store.posts(), store.interactions(), store.events()};
}

RunRecord read_run(const std::filesystem::path& dir) {
  RunRecord run;
  read_lines(dir / "agents.ndjson", [&](const json& j, const std::string&) {
    run.agents.push_back(AgentRecord{AgentId{j.at("agent_id").get<std::string>()}, persona_from_json(j.at("persona")),
                                     j.value("params", json::object())});
  });
  read_lines(dir / "posts.ndjson", [&](const json& j, const std::string&) { run.posts.push_back(post_from_json(j)); });
  read_lines(dir / "interactions.ndjson",
             [&](const json& j, const std::string&) { run.interactions.push_back(interaction_from_json(j)); });
  LogHash chain;
  read_lines(dir / "events.ndjson", [&](const json& j, const std::string& line) {
    if (j.contains("log_hash") && !j.contains("type")) {
      if (j.at("log_hash").get<std::string>() != chain.hex())
        throw Error(ErrorCode::IntegrityViolation, "events.ndjson footer does not match its lines");
      return;
    }
    chain.append(line);
    run.events.push_back(EventRow{static_cast<std::int64_t>(run.events.size()), VirtualTime{j.at("at").get<std::int64_t>()},
                                  j.at("seq").get<std::uint64_t>(), j.at("type").get<std::string>(), line, chain.hex()});
  });
  return run;
}

json to_json(const Cascade& c) {
  return json{{"root", c.root}, {"size", c.size}, {"depth", c.depth}, {"posts", c.posts}};
}

std::vector<std::string> injected_narratives(const std::vector<EventRow>& events) {
  std::vector<std::string> out;
  for (const auto& e : events) {
    if (e.kind != "control") continue;
    const json j = json::parse(e.line);
    if (j.at("command").at("type") != "inject_narrative" || !j.at("result").value("accepted", false)) continue;
    auto id = j.at("command").at("narrative_id").get<std::string>();
    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(std::move(id));
  }
  return out;
}

std::vector<Cascade> compute_cascades(const RunRecord& run, const std::string& narrative_id) {
  const PostIndex idx = index_posts(run);
  std::vector<const Post*> tagged;
  for (const auto& p : run.posts)
    if (p.narrative_id == narrative_id) tagged.push_back(&p);
  if (tagged.empty()) {
    const auto known = injected_narratives(run.events);
    if (std::find(known.begin(), known.end(), narrative_id) == known.end())
      throw Error(ErrorCode::UnknownNarrative, narrative_id);
    return {};
  }

  std::unordered_map<std::string, std::vector<std::string>> children;
  std::vector<std::string> roots;
  for (const Post* p : tagged) {
    const auto& parent = p->parent();
    if (parent && tag_of(idx, *parent) == narrative_id)
      children[*parent].push_back(p->post_id);
    else
      roots.push_back(p->post_id);
  }

  std::vector<Cascade> out;
  for (const auto& root : roots) {
    Cascade c;
    c.root = root;
    // Iterative DFS; a parent always precedes its children in post order.
    std::vector<std::pair<std::string, std::int64_t>> stack{{root, 1}};
    while (!stack.empty()) {
      auto [id, depth] = stack.back();
      stack.pop_back();
      c.posts.push_back(id);
      c.depth = std::max(c.depth, depth);
      auto it = children.find(id);
      if (it == children.end()) continue;
      for (auto k = it->second.rbegin(); k != it->second.rend(); ++k) stack.emplace_back(*k, depth + 1);
    }
    c.size = static_cast<std::int64_t>(c.posts.size());
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Cascade> compute_cascades(const Store& store, const std::string& narrative_id) {
  return compute_cascades(read_run(store), narrative_id);
}

json to_json(const DiffusionReport& r) {
  json narratives = json::array();
  for (const auto& n : r.narratives)
    narratives.push_back(json{{"narrative_id", n.narrative_id},
                              {"tagged_posts", n.tagged_posts},
                              {"reach", n.reach},
                              {"adoption", n.adoption},
                              {"cascade_count", n.cascade_count},
                              {"max_cascade_depth", n.max_cascade_depth},
                              {"cascade_size_distribution", dist_json(n.size_distribution)},
                              {"cascade_depth_distribution", dist_json(n.depth_distribution)}});
  json trajectories = json::object();
  for (const auto& [agent, points] : r.trajectories) {
    json list = json::array();
    for (const auto& p : points) {
      json j = {{"at", p.at.ms}, {"code", p.code}, {"status", p.status},
                {"memory_top_narrative", p.memory_top_narrative ? json(*p.memory_top_narrative) : json(nullptr)}};
      if (p.post_id) j["post_id"] = *p.post_id;
      list.push_back(j);
    }
    trajectories[agent] = list;
  }
  return json{{"agents", r.agents},
              {"posts", r.posts},
              {"interactions", r.interactions},
              {"events", r.events},
              {"log_hash", r.log_hash},
              {"narratives", narratives},
              {"trajectories", trajectories},
              {"graph", json{{"nodes", r.graph.nodes},
                             {"edges", r.graph.edges},
                             {"distinct_pairs", r.graph.distinct_pairs},
                             {"degree_distribution", dist_json(r.graph.degree_distribution)}}}};
}

DiffusionReport compute_report(const RunRecord& run) {
  DiffusionReport r;
  r.agents = static_cast<std::int64_t>(run.agents.size());
  r.posts = static_cast<std::int64_t>(run.posts.size());
  r.interactions = static_cast<std::int64_t>(run.interactions.size());
  r.events = static_cast<std::int64_t>(run.events.size());
  r.log_hash = run.events.empty() ? LogHash().hex() : run.events.back().chain_hash;

  std::unordered_map<std::string, Archetype> archetype;
  for (const auto& a : run.agents) archetype.emplace(a.id.value, a.persona.archetype);
  const PostIndex idx = index_posts(run);

  std::vector<std::string> ids = injected_narratives(run.events);
  std::set<std::string> extra;
  for (const auto& p : run.posts)
    if (p.narrative_id && std::find(ids.begin(), ids.end(), *p.narrative_id) == ids.end()) extra.insert(*p.narrative_id);
  ids.insert(ids.end(), extra.begin(), extra.end());

  for (const auto& id : ids) {
    NarrativeReport n;
    n.narrative_id = id;
    std::set<std::string> reach, adoption;
    for (const auto& p : run.posts) {
      if (p.narrative_id != id) continue;
      ++n.tagged_posts;
      if (const auto* a = std::get_if<AgentId>(&p.author)) reach.insert(a->value);
    }
    for (const auto& i : run.interactions) {
      if (tag_of(idx, i.target) != id) continue;
      reach.insert(i.actor.value);
      auto arch = archetype.find(i.actor.value);
      if (i.kind != InteractionKind::like && arch != archetype.end() && arch->second == Archetype::benign)
        adoption.insert(i.actor.value);
    }
    n.reach = static_cast<std::int64_t>(reach.size());
    n.adoption = static_cast<std::int64_t>(adoption.size());
    for (const auto& c : compute_cascades(run, id)) {
      ++n.cascade_count;
      n.max_cascade_depth = std::max(n.max_cascade_depth, c.depth);
      ++n.size_distribution[c.size];
      ++n.depth_distribution[c.depth];
    }
    r.narratives.push_back(std::move(n));
  }

  for (const auto& e : run.events) {
    if (e.kind != "action_due") continue;
    const json j = json::parse(e.line);
    const json& res = j.at("result");
    TrajectoryPoint p;
    p.at = e.at;
    p.code = res.value("code", std::string());
    p.status = res.value("status", std::string());
    if (auto m = res.find("memory_top"); m != res.end() && m->is_object() && m->contains("narrative_id"))
      p.memory_top_narrative = m->at("narrative_id").get<std::string>();
    if (auto post = res.find("post"); post != res.end()) p.post_id = post->at("post_id").get<std::string>();
    r.trajectories[j.at("agent").get<std::string>()].push_back(std::move(p));
  }

  r.graph.nodes = r.agents;
  std::set<std::pair<std::string, std::string>> pairs;
  std::map<std::string, std::set<std::string>> neighbors;
  for (const auto& a : run.agents) neighbors[a.id.value];
  for (const auto& i : run.interactions) {
    auto t = idx.find(i.target);
    if (t == idx.end()) continue;
    const auto* author = std::get_if<AgentId>(&t->second->author);
    if (!author) continue;
    ++r.graph.edges;
    pairs.emplace(i.actor.value, author->value);
    if (i.actor.value != author->value) {
      neighbors[i.actor.value].insert(author->value);
      neighbors[author->value].insert(i.actor.value);
    }
  }
  r.graph.distinct_pairs = static_cast<std::int64_t>(pairs.size());
  for (const auto& [agent, set] : neighbors) ++r.graph.degree_distribution[static_cast<std::int64_t>(set.size())];
  return r;
}

void write_edge_csv(const RunRecord& run, std::ostream& out) {
  const PostIndex idx = index_posts(run);
  out << "source_agent,target_agent,kind,virtual_time_ms,target_post,produced_post,target_narrative,produced_narrative\n";
  for (const auto& i : run.interactions) {
    auto t = idx.find(i.target);
    const std::optional<std::string> target_author =
        t == idx.end() ? std::nullopt : std::optional<std::string>(t->second->author_name());
    out << csv_field(i.actor.value) << ',' << csv_field(target_author) << ',' << to_string(i.kind) << ',' << i.at.ms
        << ',' << csv_field(i.target) << ',' << csv_field(i.produced_post) << ','
        << csv_field(tag_of(idx, i.target)) << ','
        << csv_field(i.produced_post ? tag_of(idx, *i.produced_post) : std::nullopt) << '\n';
  }
}

void write_actions_csv(const RunRecord& run, std::ostream& out) {
  out << "virtual_time_ms,agent,code,status,target,post_id,memory_top_narrative\n";
  for (const auto& e : run.events) {
    if (e.kind != "action_due") continue;
    const json j = json::parse(e.line);
    const json& res = j.at("result");
    std::optional<std::string> mem, post, target;
    if (auto m = res.find("memory_top"); m != res.end() && m->is_object() && m->contains("narrative_id"))
      mem = m->at("narrative_id").get<std::string>();
    if (auto p = res.find("post"); p != res.end()) post = p->at("post_id").get<std::string>();
    if (auto t = res.find("target"); t != res.end()) target = t->get<std::string>();
    out << e.at.ms << ',' << csv_field(j.at("agent").get<std::string>()) << ',' << res.value("code", std::string())
        << ',' << res.value("status", std::string()) << ',' << csv_field(target) << ',' << csv_field(post) << ','
        << csv_field(mem) << '\n';
  }
}

void export_run(const RunRecord& run, const DiffusionReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("events.ndjson");
    write_event_log(run.events, f);
  }
  {
    auto f = open("posts.ndjson");
    for (const auto& p : run.posts) f << canonical(to_json(p)) << '\n';
  }
  {
    auto f = open("interactions.ndjson");
    for (const auto& i : run.interactions) f << canonical(to_json(i)) << '\n';
  }
  {
    auto f = open("agents.ndjson");
    for (const auto& a : run.agents)
      f << canonical(json{{"agent_id", a.id.value}, {"persona", persona_to_json(a.persona)}, {"params", a.params}}) << '\n';
  }
  {
    auto f = open("graph.csv");
    write_edge_csv(run, f);
  }
  {
    auto f = open("actions.csv");
    write_actions_csv(run, f);
  }
  {
    auto f = open("report.json");
    f << to_json(report).dump(2) << '\n';
  }
}

RunOutcome run_scenario(const ScenarioConfig& config, std::uint64_t seed, Store& store,
                        const std::optional<std::filesystem::path>& out_dir, bool resume) {
  EngineOptions options;
  options.generator = make_generator(config);
  options.store = &store;
  if (out_dir) options.renderer = std::make_shared<StubRenderer>(*out_dir / "images");
  std::unique_ptr<Engine> engine;
  if (resume) {
    engine = Engine::resume(config, seed, store, options);
  } else {
    engine = std::make_unique<Engine>(config, seed, options);
  }
  if (engine->status() == EngineStatus::paused) {
    ControlEvent start;
    start.command_id = engine->last_command_id() + 1;
    start.command.kind = ControlCommand::Kind::resume;
    engine->submit(start);
  }
  engine->run_until(config.duration);
  engine->finish();

  RunOutcome outcome;
  const RunRecord run = read_run(store);
  outcome.report = compute_report(run);
  outcome.log_hash = engine->log_hash();
  outcome.events = engine->event_count();
  if (out_dir) export_run(run, outcome.report, *out_dir);
  return outcome;
}

}  // namespace botverse
