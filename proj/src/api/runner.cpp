#include <algorithm>

#include "botverse/api.hpp"
#include "botverse/errors.hpp"

namespace botverse {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kStepBatch = 256;  // steps between command checks in free run

}  // namespace

json to_json(const StateDelta& d) {
  json posts = json::array();
  for (const auto& p : d.new_posts) posts.push_back(to_json(p));
  json interactions = json::array();
  for (const auto& i : d.new_interactions) interactions.push_back(to_json(i));
  return json{{"seq", d.seq},
              {"as_of", d.as_of.ms},
              {"new_posts", posts},
              {"new_interactions", interactions},
              {"agent_updates", d.agent_updates},
              {"controls", d.controls},
              {"counters", d.counters}};
}

Runner::Runner(ScenarioConfig scenario, Store& store, EngineFactory factory, EngineOptions options,
               RunnerConfig config)
    : scenario_(std::move(scenario)),
      store_(store),
      factory_(std::move(factory)),
      options_(std::move(options)),
      config_(std::move(config)),
      commands_(config_.command_capacity),
      inbound_(scenario_.ingestion.queue_capacity) {
  snapshot_ = std::make_shared<Snapshot>();
}

Runner::~Runner() { stop(); }

void Runner::start() {
  if (thread_.joinable()) return;
  thread_ = std::thread([this] { loop(); });
}

void Runner::stop() {
  stop_ = true;
  commands_.wake();
  state_cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void Runner::wait_finished() {
  std::unique_lock lock(state_mutex_);
  state_cv_.wait(lock, [this] { return finished_.load() || stop_.load(); });
}

std::optional<std::string> Runner::failure() const {
  std::lock_guard lock(state_mutex_);
  return failure_;
}

std::uint64_t Runner::submit(ControlCommand command) {
  std::lock_guard lock(submit_mutex_);
  if (!ready_) throw Error(ErrorCode::NotRunning, "engine not ready");
  if (finished_) throw Error(ErrorCode::Conflict, "run has finished");
  EngineStatus next = requested_;
  if (command.kind == ControlCommand::Kind::pause) {
    if (requested_ != EngineStatus::running) throw Error(ErrorCode::Conflict, "pause while paused");
    next = EngineStatus::paused;
  } else if (command.kind == ControlCommand::Kind::resume) {
    if (requested_ != EngineStatus::paused) throw Error(ErrorCode::Conflict, "resume while running");
    next = EngineStatus::running;
  } else if (command.kind == ControlCommand::Kind::inject_narrative && !command.reusable &&
             submitted_narratives_.contains(command.narrative_id)) {
    throw Error(ErrorCode::DuplicateNarrative, command.narrative_id);
  }
  const std::string narrative =
      command.kind == ControlCommand::Kind::inject_narrative ? command.narrative_id : std::string{};
  const std::uint64_t id = next_command_id_;
  if (!commands_.try_push(ControlEvent{id, std::move(command)}))
    throw Error(ErrorCode::NotRunning, "command queue is full");
  ++next_command_id_;
  requested_ = next;
  if (!narrative.empty()) submitted_narratives_.insert(narrative);
  return id;
}

std::shared_ptr<const Snapshot> Runner::snapshot() const {
  std::lock_guard lock(state_mutex_);
  return snapshot_;
}

std::uint64_t Runner::next_delta_seq() const {
  std::lock_guard lock(state_mutex_);
  return history_.size();
}

std::vector<StateDelta> Runner::deltas_from(std::uint64_t from, std::chrono::milliseconds wait) const {
  std::unique_lock lock(state_mutex_);
  state_cv_.wait_for(lock, wait, [&] { return history_.size() > from || stop_.load(); });
  if (from >= history_.size()) return {};
  return {history_.begin() + static_cast<std::ptrdiff_t>(from), history_.end()};
}

void Runner::on_live_record(RawRecord&& raw) {
  std::lock_guard lock(live_mutex_);
  if (recorder_) recorder_->write(raw);
  std::optional<ExternalPost> post;
  try {
    post = normalize(raw, scenario_.ingestion);
  } catch (const Error&) {
    return;
  }
  if (!post) return;
  live_sampler_->offer(std::move(*post), [this](ExternalPost&& p) { return inbound_.try_push(std::move(p)); });
  commands_.wake();
}

void Runner::absorb(const StepResult& r) {
  pending_.new_posts.insert(pending_.new_posts.end(), r.posts.begin(), r.posts.end());
  pending_.new_interactions.insert(pending_.new_interactions.end(), r.interactions.begin(), r.interactions.end());
  if (r.control) pending_.controls.push_back(*r.control);
  touched_.insert(r.agents_touched.begin(), r.agents_touched.end());
  ++events_since_publish_;
}

void Runner::publish(Engine& engine, bool force) {
  const auto now = Clock::now();
  const bool due = events_since_publish_ >= config_.snapshot_every_events ||
                   (events_since_publish_ > 0 && now - last_publish_ >= config_.snapshot_every);
  if (!force && !due) return;
  last_publish_ = now;

  auto snap = std::make_shared<Snapshot>();
  snap->status = std::string(to_string(engine.status()));
  snap->clock = engine.clock();
  snap->event_count = engine.event_count();
  snap->last_command_id = engine.last_command_id();
  snap->log_hash = engine.log_hash();
  snap->pacing = engine.pacing();
  for (const auto& [id, n] : engine.narratives()) snap->narratives[id] = n;
  for (const auto& v : engine.agent_views()) {
    snap->agents.push_back(to_json(v, false));
    snap->agent_detail.emplace(v.id.value, to_json(v, true));
    snap->memory_params.emplace(v.id.value, v.memory_params);
  }
  const StoreCounts counts = store_.counts();
  snap->counters = json{{"events", engine.event_count()},
                        {"posts", counts.posts},
                        {"interactions", counts.interactions},
                        {"agents", engine.agent_count()},
                        {"queue", engine.queue_size()},
                        {"generations_in_flight", engine.generations_in_flight()}};
  json ingestion = {{"mode", scenario_.ingestion.mode == StreamMode::live     ? "live"
                             : scenario_.ingestion.mode == StreamMode::replay ? "replay"
                                                                              : "none"},
                    {"sample_rate", scenario_.ingestion.sample_rate}};
  if (live_) {
    IngestionCounters c = live_->counters();
    {
      std::lock_guard lock(live_mutex_);
      const auto& s = live_sampler_->counters();
      c.seen = s.seen;
      c.forwarded = s.forwarded;
      c.sampled_out = s.sampled_out;
      c.dropped = s.dropped;
    }
    ingestion["counters"] = to_json(c);
    ingestion["connected"] = live_->connected();
    ingestion["queue_depth"] = inbound_.size();
    ingestion["discarded_free_run"] = live_discarded_;
  } else {
    ingestion["counters"] = to_json(engine.ingestion_counters());
  }
  snap->ingestion = std::move(ingestion);

  const bool changed = events_since_publish_ > 0 || !pending_.controls.empty();
  std::lock_guard lock(state_mutex_);
  if (changed || history_.empty()) {
    StateDelta d = std::move(pending_);
    pending_ = StateDelta{};
    d.seq = history_.size();
    d.as_of = engine.clock();
    for (const auto& id : touched_) {
      auto it = snap->agent_detail.find(id.value);
      if (it != snap->agent_detail.end()) {
        json summary = it->second;
        summary.erase("memory_top");
        summary.erase("recent_actions");
        summary.erase("persona");
        d.agent_updates.push_back(std::move(summary));
      }
    }
    d.counters = snap->counters;
    d.counters["status"] = snap->status;
    d.counters["clock"] = snap->clock.ms;
    history_.push_back(std::move(d));
  }
  touched_.clear();
  events_since_publish_ = 0;
  snapshot_ = std::move(snap);
  state_cv_.notify_all();
}

void Runner::loop() {
  std::unique_ptr<Engine> engine;
  try {
    EngineOptions opts = options_;
    opts.store = &store_;
    opts.on_completion = [this] { commands_.wake(); };
    engine = factory_(opts);
    {
      std::lock_guard lock(submit_mutex_);
      requested_ = engine->status();
      next_command_id_ = engine->last_command_id() + 1;
    }
    last_publish_ = Clock::now();
    publish(*engine, true);

    if (scenario_.ingestion.mode == StreamMode::live) {
      live_sampler_.emplace(scenario_.ingestion.sample_rate, Rng::derive(engine->seed(), "ingest-live"));
      if (config_.record_path) recorder_ = std::make_unique<ReplayWriter>(*config_.record_path);
      live_ = std::make_unique<LiveStream>(
          scenario_.ingestion, [this](RawRecord&& r) { on_live_record(std::move(r)); }, engine->seed());
      live_->start();
    }
    ready_ = true;
    if (config_.autostart && engine->status() == EngineStatus::paused) {
      ControlCommand resume;
      resume.kind = ControlCommand::Kind::resume;
      submit(resume);
    }

    // Scaled pacing anchors virtual time to wall time from this point.
    auto wall0 = Clock::now();
    VirtualTime virt0 = engine->clock();
    PacingMode pacing = engine->pacing();
    EngineStatus status = engine->status();

    while (!stop_) {
      while (auto c = commands_.try_pop()) engine->submit(std::move(*c));
      // Live posts only enter a scaled run; free run stays replay-deterministic.
      if (engine->status() == EngineStatus::running) {
        const bool scaled = engine->pacing().kind == PacingMode::Kind::scaled;
        while (auto p = inbound_.try_pop()) {
          if (scaled)
            engine->submit(std::move(*p));
          else
            ++live_discarded_;
        }
      }
      engine->poll();

      if (engine->pacing() != pacing || engine->status() != status) {
        pacing = engine->pacing();
        status = engine->status();
        wall0 = Clock::now();
        virt0 = engine->clock();
      }

      const bool running = engine->status() == EngineStatus::running;
      std::chrono::milliseconds idle{200};
      if (engine->intake_due()) {
        absorb(engine->step());
        publish(*engine, !pending_.controls.empty());
        continue;
      }
      if (running) {
        auto next = engine->next_event_time();
        const bool in_range = next && !(scenario_.duration < *next);
        if (pacing.kind == PacingMode::Kind::free_run) {
          if (in_range) {
            for (std::size_t i = 0; i < kStepBatch && !engine->intake_due(); ++i) {
              auto head = engine->next_event_time();
              if (!head || scenario_.duration < *head) break;
              absorb(engine->step());
              if (!pending_.controls.empty()) break;
            }
            publish(*engine, !pending_.controls.empty());
            continue;
          }
        } else {
          const double elapsed_s = std::chrono::duration<double>(Clock::now() - wall0).count();
          const VirtualTime target{virt0.ms + static_cast<std::int64_t>(elapsed_s / pacing.factor * 1000.0)};
          if (in_range && !(target < *next)) {
            absorb(engine->step());
            publish(*engine, false);
            continue;
          }
          engine->advance_clock(std::min(target, scenario_.duration));
          if (in_range) {
            const double wait_ms = static_cast<double>(next->ms - target.ms) * pacing.factor;
            idle = std::chrono::milliseconds(std::clamp<std::int64_t>(static_cast<std::int64_t>(wait_ms), 1, 200));
          }
        }
        const bool clock_done = pacing.kind == PacingMode::Kind::free_run || !(engine->clock() < scenario_.duration);
        // Live posts keep arriving, so a live run ends on the clock alone.
        const bool drained = scenario_.ingestion.mode == StreamMode::live || !engine->has_pending_inbound();
        if (!in_range && clock_done && drained && engine->generations_in_flight() == 0) {
          engine->finish();
          {
            std::lock_guard lock(submit_mutex_);
            finished_ = true;
          }
          publish(*engine, true);
          if (config_.stop_when_finished) break;
        }
      }
      publish(*engine, false);
      if (auto c = commands_.pop_for(idle)) engine->submit(std::move(*c));
    }
    publish(*engine, true);
  } catch (const std::exception& e) {
    std::lock_guard lock(state_mutex_);
    failure_ = e.what();
    auto snap = std::make_shared<Snapshot>(*snapshot_);
    snap->status = "failed";
    snapshot_ = std::move(snap);
  }
  {
    std::lock_guard lock(submit_mutex_);
    finished_ = true;
  }
  if (live_) live_->stop();
  if (recorder_) recorder_->flush();
  state_cv_.notify_all();
}

}  // namespace botverse
