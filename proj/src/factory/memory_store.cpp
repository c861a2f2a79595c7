#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <map>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <unordered_map>

#include "botverse/errors.hpp"
#include "botverse/store.hpp"

namespace botverse {

json to_json(const StoreCounts& c) {
  return json{{"agents", c.agents},
              {"posts", c.posts},
              {"interactions", c.interactions},
              {"events", c.events},
              {"checkpoints", c.checkpoints}};
}

std::string encode_cursor(VirtualTime created_at, const std::string& post_id) {
  return std::to_string(created_at.ms) + ":" + post_id;
}

namespace store_detail {

CursorKey decode_cursor(const std::string& cursor) {
  const auto colon = cursor.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == cursor.size())
    throw Error(ErrorCode::InvalidCursor, cursor);
  std::int64_t at = 0;
  const char* begin = cursor.data();
  auto [ptr, ec] = std::from_chars(begin, begin + colon, at);
  if (ec != std::errc{} || ptr != begin + colon || at < 0) throw Error(ErrorCode::InvalidCursor, cursor);
  return {at, cursor.substr(colon + 1)};
}

bool matches(const Post& p, const TimelineFilter& f) {
  if (f.author && (!std::holds_alternative<AgentId>(p.author) || std::get<AgentId>(p.author) != *f.author))
    return false;
  if (f.narrative && p.narrative_id != f.narrative) return false;
  if (f.since && p.created_at < *f.since) return false;
  if (f.until && !(p.created_at < *f.until)) return false;
  return true;
}

}  // namespace store_detail

namespace {

// Timeline order: newest first, then ascending id.
struct TimelineLess {
  bool operator()(const std::pair<std::int64_t, std::string>& a,
                  const std::pair<std::int64_t, std::string>& b) const {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  }
};

class MemoryStore final : public Store {
 public:
  std::string backend_name() const override { return "in_memory"; }

  void set_run_metadata(const RunMetadata& meta) override {
    std::unique_lock lock(mutex_);
    if (meta_ && !(*meta_ == meta)) throw Error(ErrorCode::IntegrityViolation, "run metadata is immutable");
    meta_ = meta;
  }

  std::optional<RunMetadata> run_metadata() const override {
    std::shared_lock lock(mutex_);
    return meta_;
  }

  void put_agent(const AgentRecord& agent) override {
    std::unique_lock lock(mutex_);
    put_agent_locked(agent);
  }

  std::optional<AgentRecord> agent(const AgentId& id) const override {
    std::shared_lock lock(mutex_);
    auto it = agents_.find(id);
    if (it == agents_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<AgentRecord> agents() const override {
    std::shared_lock lock(mutex_);
    std::vector<AgentRecord> out;
    for (const auto& [id, rec] : agents_) out.push_back(rec);
    return out;
  }

  void put_post(const Post& post) override {
    std::unique_lock lock(mutex_);
    check_post_locked(post, {});
    insert_post_locked(post);
  }

  void append_interaction(const Interaction& interaction) override {
    std::unique_lock lock(mutex_);
    check_interaction_locked(interaction, {});
    interactions_.push_back(interaction);
  }

  void append_event(const EventRow& event) override {
    std::unique_lock lock(mutex_);
    check_event_locked(event);
    events_.push_back(event);
  }

  void commit(const AppliedBatch& batch) override {
    std::unique_lock lock(mutex_);
    std::unordered_map<std::string, const Post*> pending;
    for (const auto& p : batch.posts) {
      check_post_locked(p, pending);
      pending.emplace(p.post_id, &p);
    }
    for (const auto& i : batch.interactions) check_interaction_locked(i, pending);
    check_event_locked(batch.event);

    for (const auto& p : batch.posts) insert_post_locked(p);
    for (const auto& i : batch.interactions) interactions_.push_back(i);
    events_.push_back(batch.event);
    for (const auto& a : batch.agents) put_agent_locked(a);
  }

  std::optional<Post> get_post(const std::string& post_id) const override {
    std::shared_lock lock(mutex_);
    auto it = post_index_.find(post_id);
    if (it == post_index_.end()) return std::nullopt;
    return posts_[it->second];
  }

  TimelinePage get_timeline(const TimelineFilter& filter, std::size_t limit,
                            const std::optional<std::string>& cursor) const override {
    std::optional<store_detail::CursorKey> after;
    if (cursor) after = store_detail::decode_cursor(*cursor);
    std::shared_lock lock(mutex_);
    auto it = timeline_.begin();
    if (after) it = timeline_.upper_bound({after->created_at, after->post_id});
    TimelinePage page;
    for (; it != timeline_.end() && page.posts.size() < limit; ++it) {
      const Post& p = posts_[post_index_.at(it->second)];
      if (store_detail::matches(p, filter)) page.posts.push_back(p);
    }
    if (page.posts.size() == limit && limit > 0) {
      const Post& last = page.posts.back();
      page.next_cursor = encode_cursor(last.created_at, last.post_id);
    }
    return page;
  }

  std::vector<Post> posts() const override {
    std::shared_lock lock(mutex_);
    return posts_;
  }

  std::vector<Interaction> interactions(std::optional<VirtualTime> since) const override {
    std::shared_lock lock(mutex_);
    if (!since) return interactions_;
    std::vector<Interaction> out;
    for (const auto& i : interactions_)
      if (!(i.at < *since)) out.push_back(i);
    return out;
  }

  std::vector<EventRow> events(std::int64_t from, std::size_t limit) const override {
    std::shared_lock lock(mutex_);
    std::vector<EventRow> out;
    for (std::size_t i = static_cast<std::size_t>(std::max<std::int64_t>(0, from));
         i < events_.size() && out.size() < limit; ++i)
      out.push_back(events_[i]);
    return out;
  }

  StoreCounts counts() const override {
    std::shared_lock lock(mutex_);
    return StoreCounts{static_cast<std::int64_t>(agents_.size()), static_cast<std::int64_t>(posts_.size()),
                       static_cast<std::int64_t>(interactions_.size()),
                       static_cast<std::int64_t>(events_.size()),
                       static_cast<std::int64_t>(checkpoints_.size())};
  }

  void save_checkpoint(const Checkpoint& checkpoint) override {
    std::unique_lock lock(mutex_);
    checkpoints_[checkpoint.event_count] = checkpoint;
  }

  std::optional<Checkpoint> latest_checkpoint() const override {
    std::shared_lock lock(mutex_);
    if (checkpoints_.empty()) return std::nullopt;
    return checkpoints_.rbegin()->second;
  }

 private:
  using Pending = std::unordered_map<std::string, const Post*>;

  const Post* find_locked(const std::string& id, const Pending& pending) const {
    if (auto it = post_index_.find(id); it != post_index_.end()) return &posts_[it->second];
    if (auto it = pending.find(id); it != pending.end()) return it->second;
    return nullptr;
  }

  void check_post_locked(const Post& post, const Pending& pending) const {
    check_post(post);
    if (find_locked(post.post_id, pending))
      throw Error(ErrorCode::IntegrityViolation, "duplicate post_id " + post.post_id);
    if (const auto& parent = post.parent(); parent && !find_locked(*parent, pending))
      throw Error(ErrorCode::IntegrityViolation, post.post_id + ": unknown parent " + *parent);
  }

  void check_interaction_locked(const Interaction& i, const Pending& pending) const {
    check_interaction(i);
    const Post* target = find_locked(i.target, pending);
    if (!target) throw Error(ErrorCode::IntegrityViolation, "interaction target unknown: " + i.target);
    if (i.at < target->created_at)
      throw Error(ErrorCode::IntegrityViolation, "interaction precedes target " + i.target);
    if (i.produced_post && !find_locked(*i.produced_post, pending))
      throw Error(ErrorCode::IntegrityViolation, "produced post unknown: " + *i.produced_post);
  }

  void check_event_locked(const EventRow& e) const {
    if (e.index != static_cast<std::int64_t>(events_.size()))
      throw Error(ErrorCode::IntegrityViolation, "event index " + std::to_string(e.index) +
                                                     " but log holds " + std::to_string(events_.size()));
  }

  void insert_post_locked(const Post& post) {
    post_index_.emplace(post.post_id, posts_.size());
    timeline_.insert({post.created_at.ms, post.post_id});
    posts_.push_back(post);
  }

  void put_agent_locked(const AgentRecord& agent) {
    if (agent.id.value.empty()) throw Error(ErrorCode::MissingField, "agent_id");
    agents_[agent.id] = agent;
  }

  mutable std::shared_mutex mutex_;
  std::optional<RunMetadata> meta_;
  std::map<AgentId, AgentRecord> agents_;
  std::vector<Post> posts_;
  std::unordered_map<std::string, std::size_t> post_index_;
  std::set<std::pair<std::int64_t, std::string>, TimelineLess> timeline_;
  std::vector<Interaction> interactions_;
  std::vector<EventRow> events_;
  std::map<std::int64_t, Checkpoint> checkpoints_;
};

}  // namespace

std::unique_ptr<Store> make_memory_store() { return std::make_unique<MemoryStore>(); }

std::unique_ptr<Store> open_store(const std::string& url_in) {
  std::string url = url_in;
  if (url.empty())
    if (const char* env = std::getenv("BOTVERSE_STORE_URL"); env) url = env;
  if (url.empty() || url == "memory" || url == "in_memory") return make_memory_store();
  for (std::string prefix : {"sqlite://", "sqlite:"})
    if (url.rfind(prefix, 0) == 0) return make_sql_store(url.substr(prefix.size()));
  throw Error(ErrorCode::ConnectionFailed, "unsupported store url '" + url + "'");
}

}  // namespace botverse
