#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "botverse/domain.hpp"

namespace botverse {

// Salience weights and bookkeeping limits of an agent's memory.
struct MemoryParams {
  double alpha = 1.0;             // recency weight
  double beta = 1.0;              // importance weight
  double half_life_s = 3600.0;    // recency halves every half_life_s virtual seconds
  double repost_weight = 2.0;     // a repost counts this many likes
  std::int64_t engagement_cap = 100;
  std::size_t capacity = 256;

  bool operator==(const MemoryParams&) const = default;
};

// Throws Error{OutOfRange} naming the offending field.
void validate(const MemoryParams& p);
json to_json(const MemoryParams& p);
MemoryParams memory_params_from_json(const json& j);
// Applies only the keys present in `patch` and re-validates.
MemoryParams patched(const MemoryParams& base, const json& patch);

struct MemoryItem {
  std::string post_id;
  VirtualTime observed_at;
  std::int64_t likes_seen = 0;
  std::int64_t reposts_seen = 0;

  bool operator==(const MemoryItem&) const = default;
};

json to_json(const MemoryItem& m);
MemoryItem memory_item_from_json(const json& j);

struct MemoryScore {
  double value = 0.0;
  auto operator<=>(const MemoryScore&) const = default;
};

// 2^(-(now - observed_at) / half_life). Throws Error{NegativeAge} if now < observed_at.
double recency(VirtualTime now, VirtualTime observed_at, double half_life_s);

// min(1, ln(1 + likes + w*reposts) / ln(1 + cap)).
double importance(std::int64_t likes, std::int64_t reposts, const MemoryParams& params);

MemoryScore score(const MemoryItem& item, VirtualTime now, const MemoryParams& params);

struct ScoredItem {
  MemoryItem item;
  MemoryScore score;
};

// Ranking order: score desc, then newer observed_at, then ascending post_id.
bool ranks_before(const ScoredItem& a, const ScoredItem& b);

std::vector<ScoredItem> retrieve_top_k_scored(std::span<const MemoryItem> memory, VirtualTime now,
                                              std::size_t k, const MemoryParams& params);
std::vector<MemoryItem> retrieve_top_k(std::span<const MemoryItem> memory, VirtualTime now,
                                       std::size_t k, const MemoryParams& params);

// Dynamic memory of one agent: merge-on-reobserve, capacity-bounded by salience.
class Memory {
 public:
  Memory() = default;
  explicit Memory(std::vector<MemoryItem> items) : items_(std::move(items)) {}

  // Insert or merge (counters take the max, observed_at keeps the earliest);
  // past capacity, the lowest-ranked item under `now` is evicted.
  void remember(const MemoryItem& item, VirtualTime now, const MemoryParams& params);

  std::vector<ScoredItem> top_k(VirtualTime now, std::size_t k, const MemoryParams& params) const {
    return retrieve_top_k_scored(items_, now, k, params);
  }

  std::span<const MemoryItem> items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

  bool operator==(const Memory&) const = default;

 private:
  void evict_lowest(VirtualTime now, const MemoryParams& params);

  std::vector<MemoryItem> items_;
};

}  // namespace botverse
