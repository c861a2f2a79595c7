#include "botverse/engine.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "botverse/errors.hpp"

namespace botverse {

namespace {

constexpr std::size_t kStimulusCapacity = 8;
constexpr std::size_t kRecentActions = 32;
constexpr std::size_t kRecentTopics = 16;
constexpr int kStateVersion = 1;

// Min-heap order on (at, seq).
bool later(const SimEvent& a, const SimEvent& b) {
  if (a.at != b.at) return a.at > b.at;
  return a.seq > b.seq;
}

std::string code_str(ActionCode c) { return std::string(1, to_char(c)); }

std::string pending_key(const AgentId& agent, const ActionDecision& d) {
  return agent.value + "|" + std::to_string(d.at.ms) + "|" + code_str(d.code);
}

json result_skipped(json result, const std::string& reason) {
  result["status"] = "skipped";
  result["reason"] = reason;
  return result;
}

std::optional<std::string> opt_str(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

struct Engine::AgentState {
  AgentId id;
  Persona persona;
  DnaProgram dna;
  TemporalModel temporal;
  MemoryParams params;
  double target_bias = 3.0;
  double image_post_prob = 0.0;
  Memory memory;
  Rng rng;
  std::optional<Campaign> campaign;
  std::deque<ExternalPost> stimuli;  // newest first
  std::uint64_t actions = 0;
  std::deque<json> recent;

  AgentRecord record() const {
    return AgentRecord{id, persona,
                       json{{"dna", to_json(dna)},
                            {"temporal", to_json(temporal)},
                            {"memory_params", to_json(params)},
                            {"target_bias", target_bias},
                            {"image_post_prob", image_post_prob}}};
  }

  void note(json entry) {
    recent.push_back(std::move(entry));
    while (recent.size() > kRecentActions) recent.pop_front();
  }
};

json to_json(const AgentView& a, bool detail) {
  json j = {{"agent_id", a.id.value},
            {"handle", a.persona.handle},
            {"archetype", std::string(to_string(a.persona.archetype))},
            {"actions", a.actions},
            {"campaign", a.campaign ? json(*a.campaign) : json(nullptr)}};
  if (!detail) return j;
  j["persona"] = persona_to_json(a.persona);
  j["memory_params"] = to_json(a.memory_params);
  j["dna"] = {{"sequence", a.dna}, {"position", a.dna_position}};
  json top = json::array();
  for (const auto& s : a.memory_top) {
    json item = to_json(s.item);
    item["score"] = s.score.value;
    top.push_back(item);
  }
  j["memory_top"] = top;
  j["recent_actions"] = a.recent_actions;
  return j;
}

Engine::Engine(ScenarioConfig scenario, std::uint64_t seed, EngineOptions options)
    : Engine(std::move(scenario), seed, std::move(options), false) {}

Engine::Engine(ScenarioConfig scenario, std::uint64_t seed, EngineOptions options, bool for_resume)
    : scenario_(std::move(scenario)),
      seed_(seed),
      options_(std::move(options)),
      env_rng_(Rng::derive(seed, "env")),
      spawn_rng_(Rng::derive(seed, "spawn")),
      sampler_(scenario_.ingestion.sample_rate, Rng::derive(seed, "ingest")) {
  validate(scenario_);
  generator_ = options_.generator ? options_.generator : std::make_shared<StubGenerator>();
  if (generator_->is_remote()) pool_ = std::make_unique<GenerationPool>(options_.generation_concurrency);
  if (for_resume) return;

  Rng population_rng = Rng::derive(seed, "population");
  for (const auto& spec : scenario_.populations) {
    for (auto& agent : generate_population(spec, population_rng)) add_agent(std::move(agent), true);
    next_handle_index_[spec.persona.handle_base] = spec.count + 1;
  }
  if (options_.store) {
    options_.store->set_run_metadata(RunMetadata{seed_, scenario_hash(scenario_), canonical(scenario_.raw)});
    for (const auto& a : agents_) options_.store->put_agent(a->record());
  }
}

Engine::~Engine() {
  if (pool_) pool_->drain();
  pool_.reset();
}

void Engine::add_agent(AgentSpec spec, bool schedule_wake) {
  AgentId id{spec.persona.handle};
  if (index_.count(id)) throw Error(ErrorCode::IntegrityViolation, "duplicate agent " + id.value);
  auto a = std::make_unique<AgentState>();
  a->id = id;
  a->persona = std::move(spec.persona);
  a->dna = std::move(spec.dna);
  a->temporal = shifted(spec.temporal, scenario_.start_hour);
  a->params = spec.memory;
  a->target_bias = spec.target_bias;
  a->image_post_prob = spec.image_post_prob;
  a->rng = Rng::derive(seed_, "agent:" + id.value);
  if (schedule_wake) enqueue(next_session_start(clock_, a->temporal, a->rng), AgentWake{id});
  index_.emplace(id, agents_.size());
  agents_.push_back(std::move(a));
}

void Engine::enqueue(VirtualTime at, EventPayload payload, bool inbound) {
  if (at < clock_)
    throw Error(ErrorCode::Causality, "event at " + std::to_string(at.ms) + " before clock " + std::to_string(clock_.ms));
  queue_.push_back(SimEvent{at, next_seq_++, std::move(payload), inbound});
  std::push_heap(queue_.begin(), queue_.end(), later);
}

SimEvent Engine::pop_queue() {
  std::pop_heap(queue_.begin(), queue_.end(), later);
  SimEvent ev = std::move(queue_.back());
  queue_.pop_back();
  return ev;
}

std::optional<VirtualTime> Engine::next_event_time() const {
  if (queue_.empty()) return std::nullopt;
  return queue_.front().at;
}

void Engine::submit(ControlEvent control) { intake_.emplace_back(std::move(control)); }

void Engine::submit(ExternalPost post) { intake_.emplace_back(std::move(post)); }

void Engine::advance_clock(VirtualTime t) {
  if (auto next = next_event_time(); next && *next < t) t = *next;
  if (clock_ < t) clock_ = t;
}

void Engine::drain_completions() {
  std::lock_guard lock(completions_mutex_);
  while (!completions_.empty()) {
    intake_.emplace_back(std::move(completions_.front()));
    completions_.pop_front();
    --in_flight_;
  }
}

bool Engine::has_pending_inbound() const {
  std::lock_guard lock(completions_mutex_);
  return !intake_.empty() || !completions_.empty();
}

std::size_t Engine::generations_in_flight() const {
  std::lock_guard lock(completions_mutex_);
  return in_flight_;
}

std::deque<InboundItem>::iterator Engine::next_intake() {
  if (status_ == EngineStatus::running) return intake_.begin();
  return std::find_if(intake_.begin(), intake_.end(),
                      [](const InboundItem& i) { return std::holds_alternative<ControlEvent>(i); });
}

bool Engine::intake_ready() const {
  if (status_ == EngineStatus::finished || intake_.empty()) return false;
  const bool boundary = queue_.empty() || clock_ < queue_.front().at;
  if (!boundary) return false;
  if (status_ == EngineStatus::running) return true;
  return std::any_of(intake_.begin(), intake_.end(),
                     [](const InboundItem& i) { return std::holds_alternative<ControlEvent>(i); });
}

bool Engine::can_step() const {
  if (intake_ready()) return true;
  return status_ == EngineStatus::running && !queue_.empty();
}

StepResult Engine::step() {
  drain_completions();
  if (intake_ready()) {
    auto it = next_intake();
    InboundItem item = std::move(*it);
    intake_.erase(it);
    SimEvent ev{clock_, next_seq_++, {}, true};
    std::visit(
        [&](auto&& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, ExternalPost>) {
            v.observed_at = clock_;
            ev.payload = ExternalIngest{std::move(v)};
          } else {
            ev.payload = std::move(v);
          }
        },
        std::move(item));
    return apply(std::move(ev));
  }
  if (status_ != EngineStatus::running || queue_.empty())
    throw Error(ErrorCode::EmptyQueue, status_ == EngineStatus::running ? "queue is empty" : "engine is not running");
  return apply(pop_queue());
}

void Engine::run_until(VirtualTime t_end) {
  for (;;) {
    drain_completions();
    if (intake_ready()) {
      step();
      continue;
    }
    if (status_ == EngineStatus::running && !queue_.empty() && !(t_end < queue_.front().at)) {
      step();
      continue;
    }
    if (status_ == EngineStatus::running && pool_) {
      std::unique_lock lock(completions_mutex_);
      if (in_flight_ == 0) break;
      completions_cv_.wait(lock, [this] { return !completions_.empty(); });
      continue;
    }
    break;
  }
}

StepResult Engine::apply(SimEvent ev) {
  if (ev.at < clock_)
    throw Error(ErrorCode::Causality, "event at " + std::to_string(ev.at.ms) + " before clock " + std::to_string(clock_.ms));
  clock_ = ev.at;
  StepResult out;
  json result = std::visit(
      [&](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AgentWake>) {
          return apply_wake(p, out);
        } else if constexpr (std::is_same_v<T, ActionDue>) {
          return p.completion ? apply_completion(p, out) : apply_action(p, out);
        } else if constexpr (std::is_same_v<T, ExternalIngest>) {
          return apply_ingest(p, out);
        } else {
          return apply_control(p, out);
        }
      },
      ev.payload);

  json line = to_json(ev);
  line["result"] = std::move(result);
  std::string text = canonical(line);
  log_hash_.append(text);
  out.row = EventRow{static_cast<std::int64_t>(event_count_), ev.at, ev.seq, std::string(event_type(ev.payload)),
                     std::move(text), log_hash_.hex()};
  ++event_count_;

  if (verifying_) return out;
  if (options_.store) {
    AppliedBatch batch{out.row, out.posts, out.interactions, {}};
    for (const auto& id : out.records_changed) batch.agents.push_back(agents_[index_.at(id)]->record());
    options_.store->commit(batch);
  }
  if (options_.log) *options_.log << out.row.line << '\n';
  const bool paused_now = out.control && out.control->value("accepted", false) &&
                          out.control->at("command").at("type") == "pause";
  if (options_.store &&
      (event_count_ % static_cast<std::uint64_t>(scenario_.checkpoint_every) == 0 || paused_now))
    options_.store->save_checkpoint(make_checkpoint());
  if (paused_now && options_.log) options_.log->flush();
  return out;
}

json Engine::apply_wake(const AgentWake& w, StepResult&) {
  AgentState& a = *agents_[index_.at(w.agent)];
  const auto session = sample_session(a.dna, a.temporal, clock_, a.rng);
  json actions = json::array();
  for (const auto& act : session) {
    enqueue(act.at, ActionDue{a.id, ActionDecision{act.code, std::nullopt, act.at}, std::nullopt});
    actions.push_back(json{{"code", code_str(act.code)}, {"at", act.at.ms}});
  }
  const VirtualTime last = session.empty() ? clock_ : session.back().at;
  const VirtualTime next = next_session_start(last, a.temporal, a.rng);
  enqueue(next, AgentWake{a.id});
  return json{{"session", actions}, {"next_wake", next.ms}, {"dna_position", a.dna.position}};
}

std::optional<std::string> Engine::narrative_of_post(const std::string& post_id) const {
  auto it = posts_.find(post_id);
  if (it == posts_.end()) return std::nullopt;
  return it->second.narrative_id;
}

std::vector<ContextItem> Engine::context_for(const AgentState& a) const {
  std::vector<ContextItem> out;
  for (const auto& s : a.memory.top_k(clock_, static_cast<std::size_t>(scenario_.context_k), a.params)) {
    auto it = posts_.find(s.item.post_id);
    if (it == posts_.end()) continue;
    out.push_back(ContextItem{s.item.post_id, it->second.text, s.item.likes_seen, s.item.reposts_seen});
  }
  return out;
}

std::string Engine::latest_topic() const {
  return recent_topics_.empty() ? std::string("current events") : recent_topics_.back();
}

std::string Engine::image_topic(const AgentState& a) const {
  for (const auto& s : a.stimuli)
    if (s.topics && !s.topics->empty()) return s.topics->front();
  return recent_topics_.empty() ? std::string("everyday life") : recent_topics_.back();
}

json Engine::apply_action(const ActionDue& due, StepResult& out) {
  AgentState& a = *agents_[index_.at(due.agent)];
  const ActionCode code = due.decision.code;
  json result = {{"code", code_str(code)}};
  out.agents_touched.push_back(a.id);
  const auto top1 = a.memory.top_k(clock_, 1, a.params);
  if (top1.empty()) {
    result["memory_top"] = nullptr;
  } else {
    json m = {{"post_id", top1.front().item.post_id}};
    if (auto n = narrative_of_post(top1.front().item.post_id)) m["narrative_id"] = *n;
    result["memory_top"] = m;
  }

  std::optional<std::string> target;
  if (needs_target(code)) {
    std::vector<TargetCandidate> feed;
    for (const auto& s : a.memory.top_k(clock_, static_cast<std::size_t>(scenario_.target_k), a.params))
      feed.push_back(TargetCandidate{s.item.post_id, s.score.value, narrative_of_post(s.item.post_id)});
    TargetBias bias;
    if (a.campaign) bias.active_narrative = a.campaign->narrative_id;
    bias.factor = a.target_bias;
    target = choose_target(code, feed, a.persona, bias, a.rng);
    if (!target) {
      a.note(json{{"code", code_str(code)}, {"at", clock_.ms}, {"status", "skipped"}});
      return result_skipped(result, "no_target");
    }
    result["target"] = *target;
  }

  if (code == ActionCode::like) {
    auto& eng = engagement_[*target];
    ++eng.first;
    Interaction like{InteractionKind::like, a.id, *target, clock_, std::nullopt};
    out.interactions.push_back(like);
    result["interaction"] = to_json(like);
    result["status"] = "done";
    ++a.actions;
    a.note(json{{"code", "L"}, {"at", clock_.ms}, {"status", "done"}});
    fanout(a, {*target}, out);
    return result;
  }

  Task task;
  std::optional<Stimulus> stimulus;
  bool image = false;
  switch (code) {
    case ActionCode::post:
      task.kind = TaskKind::compose_post;
      image = a.image_post_prob > 0.0 && a.rng.bernoulli(a.image_post_prob);
      break;
    case ActionCode::ingest_react:
      if (a.stimuli.empty()) {
        a.note(json{{"code", "I"}, {"at", clock_.ms}, {"status", "skipped"}});
        return result_skipped(result, "no_stimulus");
      }
      task.kind = TaskKind::compose_post;
      stimulus = a.stimuli.front();
      result["stimulus"] = a.stimuli.front().source_id;
      a.stimuli.pop_front();
      break;
    case ActionCode::reply:
      task = Task{TaskKind::compose_reply, target, std::nullopt};
      stimulus = posts_.at(*target);
      break;
    case ActionCode::repost:
      task = Task{TaskKind::compose_repost_comment, target, std::nullopt};
      stimulus = posts_.at(*target);
      break;
    default: break;
  }
  PromptBundle bundle = build_prompt(a.persona, context_for(a), stimulus, task, a.campaign, scenario_.decode);
  const std::string topic = image ? image_topic(a) : std::string();
  if (image) result["image"] = true;

  ActionDue resolved{a.id, ActionDecision{code, target, due.decision.at}, std::nullopt};
  if (pool_) {
    result["status"] = "pending";
    pending_actions_[pending_key(a.id, resolved.decision)] = resolved;
    if (!verifying_) submit_generation(a, resolved, std::move(bundle), image, topic);
    return result;
  }

  json generated;
  try {
    generated["text"] = generator_->generate(bundle, a.rng).text;
    if (image) {
      ImagePrompt ip = compose_image_prompt(a.persona, topic, *generator_, a.rng, options_.renderer.get(), scenario_.decode);
      generated["image_prompt"] = ip.prompt;
      if (ip.image_ref) generated["image_ref"] = *ip.image_ref;
      if (ip.degraded) generated["image_degraded"] = true;
    }
  } catch (const Error& e) {
    generated = json{{"error", std::string(to_string(e.code())) + ": " + e.detail()}};
  }
  json done = finish_post(a, code, target, generated, out);
  for (auto& [k, v] : done.items()) result[k] = v;
  return result;
}

void Engine::submit_generation(AgentState& a, const ActionDue& action, PromptBundle bundle, bool image,
                               std::string topic) {
  {
    std::lock_guard lock(completions_mutex_);
    ++in_flight_;
  }
  auto generator = generator_;
  auto renderer = options_.renderer;
  auto decode = scenario_.decode;
  Persona persona = a.persona;
  pool_->submit([this, generator, renderer, decode, persona, action, bundle = std::move(bundle), image,
                 topic = std::move(topic)] {
    json generated;
    Rng unused(0);
    try {
      generated["text"] = generator->generate(bundle, unused).text;
      if (image) {
        ImagePrompt ip = compose_image_prompt(persona, topic, *generator, unused, renderer.get(), decode);
        generated["image_prompt"] = ip.prompt;
        if (ip.image_ref) generated["image_ref"] = *ip.image_ref;
        if (ip.degraded) generated["image_degraded"] = true;
      }
    } catch (const Error& e) {
      generated = json{{"error", std::string(to_string(e.code())) + ": " + e.detail()}};
    } catch (const std::exception& e) {
      generated = json{{"error", e.what()}};
    }
    ActionDue done = action;
    done.completion = std::move(generated);
    {
      std::lock_guard lock(completions_mutex_);
      completions_.push_back(std::move(done));
    }
    completions_cv_.notify_all();
    if (options_.on_completion) options_.on_completion();
  });
}

void Engine::resubmit_pending() {
  if (!pool_) return;
  for (const auto& [key, action] : pending_actions_) {
    AgentState& a = *agents_[index_.at(action.agent)];
    Task task;
    std::optional<Stimulus> stimulus;
    if (action.decision.code == ActionCode::reply || action.decision.code == ActionCode::repost) {
      task = Task{action.decision.code == ActionCode::reply ? TaskKind::compose_reply : TaskKind::compose_repost_comment,
                  action.decision.target, std::nullopt};
      stimulus = posts_.at(*action.decision.target);
    }
    submit_generation(a, action, build_prompt(a.persona, context_for(a), stimulus, task, a.campaign, scenario_.decode),
                      false, std::string());
  }
}

json Engine::apply_completion(const ActionDue& due, StepResult& out) {
  AgentState& a = *agents_[index_.at(due.agent)];
  out.agents_touched.push_back(a.id);
  pending_actions_.erase(pending_key(a.id, due.decision));
  json result = {{"code", code_str(due.decision.code)}};
  if (due.decision.target) result["target"] = *due.decision.target;
  json done = finish_post(a, due.decision.code, due.decision.target, *due.completion, out);
  for (auto& [k, v] : done.items()) result[k] = v;
  return result;
}

json Engine::finish_post(AgentState& a, ActionCode code, const std::optional<std::string>& target,
                         const json& generated, StepResult& out) {
  json result;
  if (generated.contains("error")) {
    result = result_skipped(result, "generation_failed");
    result["error"] = generated.at("error");
    a.note(json{{"code", code_str(code)}, {"at", clock_.ms}, {"status", "skipped"}});
    return result;
  }
  Post p;
  p.post_id = "p" + std::to_string(next_post_++);
  p.author = a.id;
  p.text = generated.at("text").get<std::string>();
  p.image_prompt = opt_str(generated, "image_prompt");
  p.image_ref = opt_str(generated, "image_ref");
  p.created_at = clock_;
  const std::optional<std::string> campaign =
      a.campaign ? std::optional<std::string>(a.campaign->narrative_id) : std::nullopt;
  switch (code) {
    case ActionCode::reply: {
      p.in_reply_to = target;
      auto inherited = narrative_of_post(*target);
      p.narrative_id = inherited ? inherited : campaign;
      break;
    }
    case ActionCode::repost:
      p.repost_of = target;
      p.narrative_id = narrative_of_post(*target);
      break;
    default: p.narrative_id = campaign; break;
  }
  check_post(p);
  posts_.emplace(p.post_id, p);
  out.posts.push_back(p);
  result["post"] = to_json(p);
  if (generated.value("image_degraded", false)) result["image_degraded"] = true;

  std::vector<std::string> seen{p.post_id};
  if (code == ActionCode::reply || code == ActionCode::repost) {
    if (code == ActionCode::repost) ++engagement_[*target].second;
    Interaction i{code == ActionCode::reply ? InteractionKind::reply : InteractionKind::repost, a.id, *target, clock_,
                  p.post_id};
    out.interactions.push_back(i);
    result["interaction"] = to_json(i);
    if (code == ActionCode::repost) seen.push_back(*target);
  }
  result["status"] = "done";
  ++a.actions;
  a.note(json{{"code", code_str(code)}, {"at", clock_.ms}, {"status", "done"}, {"post_id", p.post_id}});
  fanout(a, seen, out);
  return result;
}

std::vector<std::size_t> Engine::sample_indices(std::size_t n, std::size_t k, Rng& rng) const {
  // Floyd's algorithm: k distinct draws from [0, n) without replacement.
  std::set<std::size_t> chosen;
  for (std::size_t j = n - k; j < n; ++j) {
    const std::size_t t = static_cast<std::size_t>(rng.below(j + 1));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

void Engine::fanout(AgentState& actor, const std::vector<std::string>& post_ids, StepResult&) {
  const std::size_t n = agents_.size();
  if (n <= 1) return;
  const std::size_t self = index_.at(actor.id);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(scenario_.attention_sample), n - 1);
  for (std::size_t idx : sample_indices(n - 1, k, actor.rng)) {
    AgentState& observer = *agents_[idx >= self ? idx + 1 : idx];
    for (const auto& id : post_ids) {
      const auto& eng = engagement_[id];
      observer.memory.remember(MemoryItem{id, clock_, eng.first, eng.second}, clock_, observer.params);
    }
  }
}

json Engine::apply_ingest(const ExternalIngest& e, StepResult&) {
  json recipients = json::array();
  const std::size_t n = agents_.size();
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(scenario_.ingest_fanout), n);
  if (k > 0) {
    for (std::size_t idx : sample_indices(n, k, env_rng_)) {
      AgentState& a = *agents_[idx];
      a.stimuli.push_front(e.post);
      while (a.stimuli.size() > kStimulusCapacity) a.stimuli.pop_back();
      recipients.push_back(a.id.value);
    }
  }
  if (e.post.topics)
    for (const auto& t : *e.post.topics) {
      recent_topics_.push_back(t);
      if (recent_topics_.size() > kRecentTopics) recent_topics_.erase(recent_topics_.begin());
    }
  return json{{"recipients", recipients}};
}

void Engine::start_run() {
  started_ = true;
  for (const auto& n : scenario_.narratives) {
    ControlCommand cmd;
    cmd.kind = ControlCommand::Kind::inject_narrative;
    cmd.narrative_id = n.narrative_id;
    cmd.text = n.text;
    cmd.assignees = n.assignees;
    enqueue(std::max(clock_, n.at), ControlEvent{0, cmd});
  }
  if (scenario_.ingestion.mode == StreamMode::replay) {
    const auto records = load_replay(scenario_.ingestion.replay_path);
    const auto times = replay_times(records, scenario_.ingestion.gap_scale);
    const VirtualTime origin = clock_;
    for (std::size_t i = 0; i < records.size(); ++i) {
      ++sampler_.counters().records;
      std::optional<ExternalPost> post;
      try {
        post = normalize(records[i], scenario_.ingestion, VirtualTime{origin.ms + times[i].ms});
      } catch (const Error&) {
        ++sampler_.counters().protocol_errors;
        continue;
      }
      if (!post) continue;
      sampler_.offer(std::move(*post), [this](ExternalPost&& p) {
        const VirtualTime at = p.observed_at;
        enqueue(at, ExternalIngest{std::move(p)});
        return true;
      });
    }
  }
}

json Engine::apply_control(const ControlEvent& c, StepResult& out) {
  last_command_id_ = std::max(last_command_id_, c.command_id);
  json result = {{"accepted", true}};
  const ControlCommand& cmd = c.command;
  try {
    switch (cmd.kind) {
      case ControlCommand::Kind::pause:
        if (status_ != EngineStatus::running) throw Error(ErrorCode::Conflict, "pause while " + std::string(to_string(status_)));
        status_ = EngineStatus::paused;
        break;
      case ControlCommand::Kind::resume:
        if (status_ != EngineStatus::paused) throw Error(ErrorCode::Conflict, "resume while " + std::string(to_string(status_)));
        status_ = EngineStatus::running;
        if (!started_) start_run();
        break;
      case ControlCommand::Kind::set_pacing: pacing_ = cmd.pacing; break;
      case ControlCommand::Kind::inject_narrative: {
        if (narratives_.count(cmd.narrative_id) && !cmd.reusable)
          throw Error(ErrorCode::DuplicateNarrative, cmd.narrative_id);
        std::vector<AgentState*> assignees;
        if (cmd.assignees.archetype) {
          for (auto& a : agents_)
            if (a->persona.archetype == *cmd.assignees.archetype) assignees.push_back(a.get());
        } else {
          for (const auto& id : cmd.assignees.agents) {
            auto it = index_.find(id);
            if (it == index_.end()) throw Error(ErrorCode::NoAssignees, "unknown agent " + id.value);
            assignees.push_back(agents_[it->second].get());
          }
        }
        if (assignees.empty()) throw Error(ErrorCode::NoAssignees, "policy matches no agent");
        std::string text = cmd.text;
        if (auto pos = text.find("{topic}"); pos != std::string::npos) text.replace(pos, 7, latest_topic());
        json ids = json::array();
        for (AgentState* a : assignees) {
          a->campaign = Campaign{cmd.narrative_id, text};
          ids.push_back(a->id.value);
          out.agents_touched.push_back(a->id);
        }
        narratives_[cmd.narrative_id] = json{{"narrative_id", cmd.narrative_id},
                                             {"text", text},
                                             {"at", clock_.ms},
                                             {"command_id", c.command_id},
                                             {"assigned", assignees.size()}};
        result["assigned"] = assignees.size();
        result["assignees"] = ids;
        result["text"] = text;
        break;
      }
      case ControlCommand::Kind::spawn_agents: {
        PopulationSpec spec;
        try {
          spec = population_from_json(cmd.population, "population");
        } catch (const Error& e) {
          throw Error(ErrorCode::InvalidCommand, e.detail());
        }
        auto& next_index = next_handle_index_[spec.persona.handle_base];
        if (next_index == 0) next_index = 1;
        auto specs = generate_population(spec, spawn_rng_, next_index);
        for (const auto& s : specs)
          if (index_.count(AgentId{s.persona.handle}))
            throw Error(ErrorCode::InvalidCommand, "handle already taken: " + s.persona.handle);
        json ids = json::array();
        for (auto& s : specs) {
          ids.push_back(s.persona.handle);
          AgentId id{s.persona.handle};
          add_agent(std::move(s), true);
          out.agents_touched.push_back(id);
          out.records_changed.push_back(id);
        }
        next_index += spec.count;
        result["spawned"] = ids;
        break;
      }
      case ControlCommand::Kind::patch_memory_params: {
        std::vector<AgentState*> targets;
        if (cmd.selector.all) {
          for (auto& a : agents_) targets.push_back(a.get());
        } else if (cmd.selector.archetype) {
          for (auto& a : agents_)
            if (a->persona.archetype == *cmd.selector.archetype) targets.push_back(a.get());
        } else {
          for (const auto& id : cmd.selector.agents) {
            auto it = index_.find(id);
            if (it == index_.end()) throw Error(ErrorCode::InvalidCommand, "unknown agent " + id.value);
            targets.push_back(agents_[it->second].get());
          }
        }
        if (targets.empty()) throw Error(ErrorCode::InvalidCommand, "selector matches no agent");
        std::vector<MemoryParams> updated;
        for (AgentState* a : targets) updated.push_back(patched(a->params, cmd.memory_patch));
        for (std::size_t i = 0; i < targets.size(); ++i) {
          targets[i]->params = updated[i];
          out.agents_touched.push_back(targets[i]->id);
          out.records_changed.push_back(targets[i]->id);
        }
        result["patched"] = targets.size();
        break;
      }
    }
  } catch (const Error& e) {
    result = json{{"accepted", false}, {"error", std::string(to_string(e.code()))}, {"detail", e.detail()}};
  }
  json control = result;
  control["command_id"] = c.command_id;
  control["command"] = to_json(cmd);
  out.control = std::move(control);
  return result;
}

json Engine::state_json() const {
  json agents = json::array();
  for (const auto& a : agents_) {
    json memory = json::array();
    for (const auto& m : a->memory.items()) memory.push_back(to_json(m));
    json stimuli = json::array();
    for (const auto& s : a->stimuli) stimuli.push_back(to_json(s));
    agents.push_back(json{{"spec", json{{"persona", persona_to_json(a->persona)},
                                        {"dna", to_json(a->dna)},
                                        {"temporal", to_json(a->temporal)},
                                        {"memory_params", to_json(a->params)},
                                        {"target_bias", a->target_bias},
                                        {"image_post_prob", a->image_post_prob}}},
                          {"memory", memory},
                          {"rng", a->rng},
                          {"campaign", a->campaign ? json{{"narrative_id", a->campaign->narrative_id},
                                                          {"text", a->campaign->text}}
                                                   : json(nullptr)},
                          {"stimuli", stimuli},
                          {"actions", a->actions},
                          {"recent", json(std::vector<json>(a->recent.begin(), a->recent.end()))}});
  }
  std::vector<SimEvent> queue = queue_;
  std::sort(queue.begin(), queue.end(), [](const SimEvent& x, const SimEvent& y) { return later(y, x); });
  json q = json::array();
  for (const auto& e : queue) q.push_back(to_json(e));
  json posts = json::array();
  json engagement = json::object();
  for (std::uint64_t n = 1; n < next_post_; ++n) {
    const std::string id = "p" + std::to_string(n);
    auto it = posts_.find(id);
    if (it == posts_.end()) continue;
    posts.push_back(to_json(it->second));
    auto e = engagement_.find(id);
    if (e != engagement_.end() && (e->second.first || e->second.second))
      engagement[id] = {e->second.first, e->second.second};
  }
  json pending = json::array();
  for (const auto& [key, action] : pending_actions_) {
    SimEvent e{action.decision.at, 0, action, false};
    pending.push_back(to_json(e));
  }
  return json{{"version", kStateVersion},
              {"scenario_hash", scenario_hash(scenario_)},
              {"seed", seed_},
              {"clock", clock_.ms},
              {"status", std::string(to_string(status_))},
              {"started", started_},
              {"pacing", to_json(pacing_)},
              {"next_seq", next_seq_},
              {"event_count", event_count_},
              {"next_post", next_post_},
              {"last_command_id", last_command_id_},
              {"log_hash", log_hash_.hex()},
              {"queue", q},
              {"agents", agents},
              {"posts", posts},
              {"engagement", engagement},
              {"narratives", narratives_},
              {"next_handle_index", next_handle_index_},
              {"env_rng", env_rng_},
              {"spawn_rng", spawn_rng_},
              {"sampler", json{{"rng", sampler_.rng()}, {"counters", to_json(sampler_.counters())}}},
              {"recent_topics", recent_topics_},
              {"pending_actions", pending}};
}

Checkpoint Engine::make_checkpoint() const {
  Checkpoint c;
  c.event_count = static_cast<std::int64_t>(event_count_);
  c.as_of = clock_;
  c.state = canonical(state_json());
  c.state_hash = sha256_hex(c.state);
  return c;
}

void Engine::load_state(const json& s) {
  if (s.at("version").get<int>() != kStateVersion) throw Error(ErrorCode::CorruptCheckpoint, "unknown state version");
  if (s.at("scenario_hash").get<std::string>() != scenario_hash(scenario_) || s.at("seed").get<std::uint64_t>() != seed_)
    throw Error(ErrorCode::CorruptCheckpoint, "checkpoint belongs to a different scenario or seed");
  clock_ = VirtualTime{s.at("clock").get<std::int64_t>()};
  const std::string status = s.at("status").get<std::string>();
  status_ = status == "running" ? EngineStatus::running : status == "paused" ? EngineStatus::paused : EngineStatus::finished;
  started_ = s.at("started").get<bool>();
  pacing_ = pacing_from_json(s.at("pacing"));
  next_seq_ = s.at("next_seq").get<std::uint64_t>();
  event_count_ = s.at("event_count").get<std::uint64_t>();
  next_post_ = s.at("next_post").get<std::uint64_t>();
  last_command_id_ = s.at("last_command_id").get<std::uint64_t>();
  log_hash_ = LogHash(s.at("log_hash").get<std::string>());

  for (const auto& aj : s.at("agents")) {
    AgentSpec spec = agent_spec_from_json(aj.at("spec"));
    auto a = std::make_unique<AgentState>();
    a->id = AgentId{spec.persona.handle};
    a->persona = std::move(spec.persona);
    a->dna = std::move(spec.dna);
    a->temporal = spec.temporal;  // already shifted
    a->params = spec.memory;
    a->target_bias = spec.target_bias;
    a->image_post_prob = spec.image_post_prob;
    std::vector<MemoryItem> items;
    for (const auto& m : aj.at("memory")) items.push_back(memory_item_from_json(m));
    a->memory = Memory(std::move(items));
    a->rng = aj.at("rng").get<Rng>();
    if (!aj.at("campaign").is_null())
      a->campaign = Campaign{aj.at("campaign").at("narrative_id").get<std::string>(),
                             aj.at("campaign").at("text").get<std::string>()};
    for (const auto& st : aj.at("stimuli")) a->stimuli.push_back(external_post_from_json(st));
    a->actions = aj.at("actions").get<std::uint64_t>();
    for (const auto& r : aj.at("recent")) a->recent.push_back(r);
    index_.emplace(a->id, agents_.size());
    agents_.push_back(std::move(a));
  }
  for (const auto& e : s.at("queue")) queue_.push_back(sim_event_from_json(e));
  std::make_heap(queue_.begin(), queue_.end(), later);
  for (const auto& pj : s.at("posts")) {
    Post p = post_from_json(pj);
    engagement_[p.post_id] = {0, 0};
    posts_.emplace(p.post_id, std::move(p));
  }
  for (const auto& [id, counts] : s.at("engagement").items())
    engagement_[id] = {counts.at(0).get<std::int64_t>(), counts.at(1).get<std::int64_t>()};
  narratives_ = s.at("narratives").get<std::map<std::string, json>>();
  next_handle_index_ = s.at("next_handle_index").get<std::map<std::string, std::int64_t>>();
  env_rng_ = s.at("env_rng").get<Rng>();
  spawn_rng_ = s.at("spawn_rng").get<Rng>();
  sampler_ = Sampler(scenario_.ingestion.sample_rate, s.at("sampler").at("rng").get<Rng>(),
                     ingestion_counters_from_json(s.at("sampler").at("counters")));
  recent_topics_ = s.at("recent_topics").get<std::vector<std::string>>();
  for (const auto& pj : s.at("pending_actions")) {
    SimEvent e = sim_event_from_json(pj);
    const auto& a = std::get<ActionDue>(e.payload);
    pending_actions_[pending_key(a.agent, a.decision)] = a;
  }
}

std::unique_ptr<Engine> Engine::resume(ScenarioConfig scenario, std::uint64_t seed, Store& store, EngineOptions options) {
  auto cp = store.latest_checkpoint();
  if (!cp) throw Error(ErrorCode::NoCheckpoint, "store holds no checkpoint");
  if (sha256_hex(cp->state) != cp->state_hash)
    throw Error(ErrorCode::CorruptCheckpoint, "state hash mismatch at event " + std::to_string(cp->event_count));
  const json state = json::parse(cp->state, nullptr, false);
  if (state.is_discarded()) throw Error(ErrorCode::CorruptCheckpoint, "state is not valid JSON");

  EngineOptions quiet = options;
  quiet.store = nullptr;
  quiet.log = nullptr;
  std::unique_ptr<Engine> engine(new Engine(std::move(scenario), seed, quiet, true));
  try {
    engine->load_state(state);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, e.what());
  }

  engine->verifying_ = true;
  for (const auto& row : store.events(cp->event_count)) {
    const json line = json::parse(row.line, nullptr, false);
    if (line.is_discarded()) throw Error(ErrorCode::CorruptCheckpoint, "stored event " + std::to_string(row.index) + " is not JSON");
    StepResult r;
    if (line.value("src", std::string()) == "in") {
      SimEvent ev = sim_event_from_json(line);
      if (ev.seq != engine->next_seq_)
        throw Error(ErrorCode::CorruptCheckpoint, "sequence gap at event " + std::to_string(row.index));
      ++engine->next_seq_;
      r = engine->apply(std::move(ev));
    } else {
      if (engine->queue_.empty()) throw Error(ErrorCode::CorruptCheckpoint, "queue exhausted at event " + std::to_string(row.index));
      r = engine->apply(engine->pop_queue());
    }
    if (r.row.line != row.line || r.row.chain_hash != row.chain_hash)
      throw Error(ErrorCode::CorruptCheckpoint, "replay diverged at event " + std::to_string(row.index));
  }
  engine->verifying_ = false;
  engine->options_.store = options.store;
  engine->options_.log = options.log;
  engine->resubmit_pending();
  return engine;
}

void Engine::write_log_footer() {
  if (!options_.log) return;
  *options_.log << canonical(json{{"log_hash", log_hash_.hex()}}) << '\n';
  options_.log->flush();
}

AgentView Engine::view_of(const AgentState& a, std::size_t top_k) const {
  AgentView v;
  v.id = a.id;
  v.persona = a.persona;
  v.memory_params = a.params;
  v.dna = dna_string(a.dna.sequence);
  v.dna_position = a.dna.position;
  if (a.campaign) v.campaign = a.campaign->narrative_id;
  v.actions = a.actions;
  v.memory_top = a.memory.top_k(clock_, top_k, a.params);
  v.recent_actions.assign(a.recent.begin(), a.recent.end());
  return v;
}

std::vector<AgentView> Engine::agent_views(std::size_t top_k) const {
  std::vector<AgentView> out;
  out.reserve(agents_.size());
  for (const auto& a : agents_) out.push_back(view_of(*a, top_k));
  return out;
}

std::optional<AgentView> Engine::agent_view(const AgentId& id, std::size_t top_k) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return view_of(*agents_[it->second], top_k);
}

void write_event_log(const std::vector<EventRow>& rows, std::ostream& out) {
  for (const auto& r : rows) out << r.line << '\n';
  const std::string head = rows.empty() ? LogHash().hex() : rows.back().chain_hash;
  out << canonical(json{{"log_hash", head}}) << '\n';
}

}  // namespace botverse
