#include "botverse/memory.hpp"

#include <algorithm>
#include <cmath>

#include "botverse/errors.hpp"

namespace botverse {

void validate(const MemoryParams& p) {
  if (!(p.alpha >= 0.0) || !std::isfinite(p.alpha)) throw Error(ErrorCode::OutOfRange, "alpha");
  if (!(p.beta >= 0.0) || !std::isfinite(p.beta)) throw Error(ErrorCode::OutOfRange, "beta");
  if (!(p.alpha + p.beta > 0.0)) throw Error(ErrorCode::OutOfRange, "alpha+beta must be positive");
  if (!(p.half_life_s > 0.0) || !std::isfinite(p.half_life_s))
    throw Error(ErrorCode::OutOfRange, "half_life");
  if (!(p.repost_weight >= 0.0)) throw Error(ErrorCode::OutOfRange, "repost_weight");
  if (p.engagement_cap < 1) throw Error(ErrorCode::OutOfRange, "engagement_cap");
  if (p.capacity < 1) throw Error(ErrorCode::OutOfRange, "capacity");
}

json to_json(const MemoryParams& p) {
  return json{{"alpha", p.alpha},
              {"beta", p.beta},
              {"half_life", p.half_life_s},
              {"repost_weight", p.repost_weight},
              {"engagement_cap", p.engagement_cap},
              {"capacity", p.capacity}};
}

MemoryParams patched(const MemoryParams& base, const json& patch) {
  if (!patch.is_object()) throw Error(ErrorCode::MalformedJson, "memory params must be an object");
  MemoryParams p = base;
  try {
    for (const auto& [key, value] : patch.items()) {
      if (key == "alpha") p.alpha = value.get<double>();
      else if (key == "beta") p.beta = value.get<double>();
      else if (key == "half_life") p.half_life_s = value.get<double>();
      else if (key == "repost_weight") p.repost_weight = value.get<double>();
      else if (key == "engagement_cap") p.engagement_cap = value.get<std::int64_t>();
      else if (key == "capacity") {
        auto c = value.get<std::int64_t>();
        if (c < 1) throw Error(ErrorCode::OutOfRange, "capacity");
        p.capacity = static_cast<std::size_t>(c);
      } else {
        throw Error(ErrorCode::MalformedJson, "unknown memory param '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  validate(p);
  return p;
}

MemoryParams memory_params_from_json(const json& j) { return patched(MemoryParams{}, j); }

json to_json(const MemoryItem& m) {
  return json{{"post_id", m.post_id},
              {"observed_at", m.observed_at.ms},
              {"likes_seen", m.likes_seen},
              {"reposts_seen", m.reposts_seen}};
}

MemoryItem memory_item_from_json(const json& j) {
  return MemoryItem{j.at("post_id").get<std::string>(),
                    VirtualTime{j.at("observed_at").get<std::int64_t>()},
                    j.at("likes_seen").get<std::int64_t>(),
                    j.at("reposts_seen").get<std::int64_t>()};
}

double recency(VirtualTime now, VirtualTime observed_at, double half_life_s) {
  if (now < observed_at)
    throw Error(ErrorCode::NegativeAge, "now=" + std::to_string(now.ms) +
                                            " observed_at=" + std::to_string(observed_at.ms));
  const double age_s = static_cast<double>(now.ms - observed_at.ms) / 1000.0;
  return std::exp2(-age_s / half_life_s);
}

double importance(std::int64_t likes, std::int64_t reposts, const MemoryParams& params) {
  const double engagement =
      static_cast<double>(likes) + params.repost_weight * static_cast<double>(reposts);
  if (engagement <= 0.0) return 0.0;
  const double v =
      std::log1p(engagement) / std::log1p(static_cast<double>(params.engagement_cap));
  return std::min(1.0, v);
}

MemoryScore score(const MemoryItem& item, VirtualTime now, const MemoryParams& params) {
  return MemoryScore{params.alpha * recency(now, item.observed_at, params.half_life_s) +
                     params.beta * importance(item.likes_seen, item.reposts_seen, params)};
}

bool ranks_before(const ScoredItem& a, const ScoredItem& b) {
  if (a.score.value != b.score.value) return a.score.value > b.score.value;
  if (a.item.observed_at != b.item.observed_at) return a.item.observed_at > b.item.observed_at;
  return a.item.post_id < b.item.post_id;
}

std::vector<ScoredItem> retrieve_top_k_scored(std::span<const MemoryItem> memory, VirtualTime now,
                                              std::size_t k, const MemoryParams& params) {
  std::vector<ScoredItem> scored;
  scored.reserve(memory.size());
  for (const auto& item : memory) scored.push_back({item, score(item, now, params)});
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    ranks_before);
  scored.resize(n);
  return scored;
}

std::vector<MemoryItem> retrieve_top_k(std::span<const MemoryItem> memory, VirtualTime now,
                                       std::size_t k, const MemoryParams& params) {
  std::vector<MemoryItem> out;
  for (auto& s : retrieve_top_k_scored(memory, now, k, params)) out.push_back(std::move(s.item));
  return out;
}

void Memory::remember(const MemoryItem& item, VirtualTime now, const MemoryParams& params) {
  auto it = std::find_if(items_.begin(), items_.end(),
                         [&](const MemoryItem& m) { return m.post_id == item.post_id; });
  if (it != items_.end()) {
    it->likes_seen = std::max(it->likes_seen, item.likes_seen);
    it->reposts_seen = std::max(it->reposts_seen, item.reposts_seen);
    it->observed_at = std::min(it->observed_at, item.observed_at);
    return;
  }
  items_.push_back(item);
  while (items_.size() > params.capacity) evict_lowest(now, params);
}

void Memory::evict_lowest(VirtualTime now, const MemoryParams& params) {
  // The victim is the item that would rank last in retrieve_top_k.
  std::size_t worst = 0;
  double worst_score = score(items_[0], now, params).value;
  for (std::size_t i = 1; i < items_.size(); ++i) {
    const double s = score(items_[i], now, params).value;
    const MemoryItem& c = items_[i];
    const MemoryItem& w = items_[worst];
    const bool lower = s != worst_score           ? s < worst_score
                       : c.observed_at != w.observed_at ? c.observed_at < w.observed_at
                                                        : c.post_id > w.post_id;
    if (lower) {
      worst = i;
      worst_score = s;
    }
  }
  items_[worst] = std::move(items_.back());
  items_.pop_back();
}

}  // namespace botverse
