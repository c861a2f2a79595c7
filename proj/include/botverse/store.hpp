#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "botverse/domain.hpp"

namespace botverse {

struct AgentRecord {
  AgentId id;
  Persona persona;
  json params = json::object();  // DNA program, temporal model, memory params

  bool operator==(const AgentRecord&) const = default;
};

struct RunMetadata {
  std::uint64_t seed = 0;
  std::string scenario_hash;
  std::string scenario;  // canonical scenario JSON

  bool operator==(const RunMetadata&) const = default;
};

// One applied SimEvent in the authoritative log.
struct EventRow {
  std::int64_t index = 0;  // position in the applied sequence, from 0
  VirtualTime at;
  std::uint64_t seq = 0;
  std::string kind;
  std::string line;        // canonical JSON of the event
  std::string chain_hash;  // log hash after this event

  bool operator==(const EventRow&) const = default;
};

struct Checkpoint {
  std::int64_t event_count = 0;  // applied events covered by `state`
  VirtualTime as_of;
  std::string state;
  std::string state_hash;

  bool operator==(const Checkpoint&) const = default;
};

struct StoreCounts {
  std::int64_t agents = 0;
  std::int64_t posts = 0;
  std::int64_t interactions = 0;
  std::int64_t events = 0;
  std::int64_t checkpoints = 0;

  bool operator==(const StoreCounts&) const = default;
};

json to_json(const StoreCounts& c);

struct TimelineFilter {
  std::optional<AgentId> author;
  std::optional<std::string> narrative;
  std::optional<VirtualTime> since;  // inclusive
  std::optional<VirtualTime> until;  // exclusive
};

struct TimelinePage {
  std::vector<Post> posts;
  std::optional<std::string> next_cursor;
};

// Everything one engine step writes, committed atomically.
struct AppliedBatch {
  EventRow event;
  std::vector<Post> posts;
  std::vector<Interaction> interactions;
  std::vector<AgentRecord> agents;
};

// The Factory: authoritative store for one run. A single writer (the engine
// loop) and any number of concurrent readers; reads never observe a partially
// committed batch. Both backends share this contract and its error behavior.
class Store {
 public:
  virtual ~Store() = default;

  virtual std::string backend_name() const = 0;

  // Immutable once set; a differing second call throws IntegrityViolation.
  virtual void set_run_metadata(const RunMetadata& meta) = 0;
  virtual std::optional<RunMetadata> run_metadata() const = 0;

  virtual void put_agent(const AgentRecord& agent) = 0;
  virtual std::optional<AgentRecord> agent(const AgentId& id) const = 0;
  virtual std::vector<AgentRecord> agents() const = 0;

  // Parents must exist and ids must be new. Throws IntegrityViolation.
  virtual void put_post(const Post& post) = 0;
  // Target (and produced post) must exist; at >= target.created_at.
  virtual void append_interaction(const Interaction& interaction) = 0;
  // Index must equal the current event count.
  virtual void append_event(const EventRow& event) = 0;
  virtual void commit(const AppliedBatch& batch) = 0;

  virtual std::optional<Post> get_post(const std::string& post_id) const = 0;
  // Sorted by (created_at desc, post_id asc); cursors are opaque and stable.
  // Throws InvalidCursor.
  virtual TimelinePage get_timeline(const TimelineFilter& filter, std::size_t limit,
                                    const std::optional<std::string>& cursor) const = 0;
  // Insertion order.
  virtual std::vector<Post> posts() const = 0;
  virtual std::vector<Interaction> interactions(std::optional<VirtualTime> since = std::nullopt) const = 0;
  virtual std::vector<EventRow> events(std::int64_t from = 0,
                                       std::size_t limit = static_cast<std::size_t>(-1)) const = 0;
  virtual StoreCounts counts() const = 0;

  virtual void save_checkpoint(const Checkpoint& checkpoint) = 0;
  virtual std::optional<Checkpoint> latest_checkpoint() const = 0;
};

// "memory" / "in_memory" or "sqlite:<path>". An empty url falls back to
// BOTVERSE_STORE_URL, then to in-memory. Throws ConnectionFailed,
// MigrationConflict.
std::unique_ptr<Store> open_store(const std::string& url = "");

std::string encode_cursor(VirtualTime created_at, const std::string& post_id);

// Shared helpers for the backends.
namespace store_detail {
struct CursorKey {
  std::int64_t created_at;
  std::string post_id;
};
CursorKey decode_cursor(const std::string& cursor);
bool matches(const Post& p, const TimelineFilter& f);
}  // namespace store_detail

std::unique_ptr<Store> make_memory_store();
std::unique_ptr<Store> make_sql_store(const std::string& path);

}  // namespace botverse
