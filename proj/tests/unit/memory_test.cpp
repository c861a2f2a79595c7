#include <doctest.h>

#include <cmath>

#include "botverse/errors.hpp"
#include "botverse/memory.hpp"
#include "botverse/rng.hpp"
#include "oracles.hpp"

using namespace botverse;

namespace {

// ln 10 / ln 101 to 40 digits.
constexpr double kImportance9 = 0.4989219858054781181374508597684096846622;

std::vector<MemoryItem> random_items(Rng& rng, std::size_t n, VirtualTime now, bool with_ties) {
  std::vector<MemoryItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    MemoryItem m;
    m.post_id = "p" + std::to_string(rng.below(1'000'000)) + "_" + std::to_string(i);
    m.observed_at = VirtualTime{static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(now.ms) + 1))};
    m.likes_seen = static_cast<std::int64_t>(rng.below(50));
    m.reposts_seen = static_cast<std::int64_t>(rng.below(10));
    items.push_back(m);
  }
  if (with_ties && n > 4) {
    // Exact duplicates of score and time, distinguished only by id.
    for (std::size_t i = 0; i < n / 4; ++i) {
      MemoryItem copy = items[rng.below(n)];
      copy.post_id = "tie_" + std::to_string(i);
      items.push_back(copy);
    }
  }
  return items;
}

MemoryParams random_params(Rng& rng) {
  MemoryParams p;
  p.alpha = rng.uniform() * 3.0;
  p.beta = rng.uniform() * 3.0 + 0.01;
  p.half_life_s = 60.0 + rng.uniform() * 86400.0;
  p.repost_weight = 1.0 + rng.uniform() * 3.0;
  p.engagement_cap = 1 + static_cast<std::int64_t>(rng.below(500));
  return p;
}

}  // namespace

TEST_SUITE("memory") {

TEST_CASE("recency halves at the half life") {
  CHECK(recency(VirtualTime{3'600'000}, VirtualTime{0}, 3600.0) == 0.5);
  CHECK(recency(VirtualTime{500}, VirtualTime{500}, 10.0) == 1.0);
  CHECK(recency(VirtualTime{7'200'000}, VirtualTime{0}, 3600.0) == 0.25);
  try {
    recency(VirtualTime{0}, VirtualTime{1}, 1.0);
    FAIL("expected NegativeAge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NegativeAge);
  }
}

TEST_CASE("importance matches the closed form") {
  MemoryParams p;
  CHECK(std::abs(importance(9, 0, p) - kImportance9) <= 1e-12);
  CHECK(importance(0, 0, p) == 0.0);
  CHECK(importance(100, 0, p) == 1.0);
  CHECK(importance(10'000, 0, p) == 1.0);
  // A repost counts repost_weight likes.
  CHECK(importance(0, 3, p) == importance(6, 0, p));
}

TEST_CASE("score is covariant under scaling both weights") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const VirtualTime now{static_cast<std::int64_t>(rng.below(10'000'000)) + 1};
    auto items = random_items(rng, 300, now, true);
    MemoryParams p = random_params(rng);
    const double c = 0.1 + rng.uniform() * 10.0;
    MemoryParams scaled = p;
    scaled.alpha *= c;
    scaled.beta *= c;
    for (const auto& m : items) {
      const double a = score(m, now, p).value * c;
      const double b = score(m, now, scaled).value;
      REQUIRE(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)));
    }
    const auto base = retrieve_top_k(items, now, 20, p);
    const auto after = retrieve_top_k(items, now, 20, scaled);
    CHECK(base == after);
  }
}

TEST_CASE("retrieve_top_k equals the full-sort oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const VirtualTime now{static_cast<std::int64_t>(rng.below(100'000'000)) + 1};
    const std::size_t n = static_cast<std::size_t>(rng.below(400));
    auto items = random_items(rng, n, now, trial % 2 == 0);
    const MemoryParams p = random_params(rng);
    const std::size_t k = static_cast<std::size_t>(rng.below(n + 5));
    std::vector<std::string> got;
    for (const auto& m : retrieve_top_k(items, now, k, p)) got.push_back(m.post_id);
    REQUIRE(got == oracle::top_k(items, now, k, p));
  }
}

TEST_CASE("remember merges re-observations and evicts the lowest ranked") {
  MemoryParams p;
  p.capacity = 3;
  Memory mem;
  mem.remember({"a", VirtualTime{0}, 1, 0}, VirtualTime{0}, p);
  mem.remember({"a", VirtualTime{100}, 5, 1}, VirtualTime{100}, p);
  REQUIRE(mem.size() == 1);
  CHECK(mem.items()[0] == MemoryItem{"a", VirtualTime{0}, 5, 1});

  mem.remember({"b", VirtualTime{1000}, 0, 0}, VirtualTime{1000}, p);
  mem.remember({"c", VirtualTime{2000}, 90, 0}, VirtualTime{2000}, p);
  mem.remember({"d", VirtualTime{3000}, 0, 0}, VirtualTime{3000}, p);
  CHECK(mem.size() == 3);
  // The evicted item is the one the ranking puts last.
  const auto ranked = Memory({{"a", VirtualTime{0}, 5, 1}, {"b", VirtualTime{1000}, 0, 0},
                              {"c", VirtualTime{2000}, 90, 0}, {"d", VirtualTime{3000}, 0, 0}})
                          .top_k(VirtualTime{3000}, 4, p);
  const std::string victim = ranked.back().item.post_id;
  for (const auto& m : mem.items()) CHECK(m.post_id != victim);
}

TEST_CASE("memory params validation and patching") {
  MemoryParams p;
  MemoryParams q = patched(p, json{{"alpha", 2.5}, {"half_life", 60}});
  CHECK(q.alpha == 2.5);
  CHECK(q.half_life_s == 60.0);
  CHECK(q.beta == p.beta);
  CHECK(memory_params_from_json(to_json(q)) == q);
  auto code = [&](const json& patch) {
    try {
      patched(p, patch);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  CHECK(code(json{{"alpha", -1}}) == ErrorCode::OutOfRange);
  CHECK(code(json{{"half_life", 0}}) == ErrorCode::OutOfRange);
  CHECK(code(json{{"alpha", 0}, {"beta", 0}}) == ErrorCode::OutOfRange);
  CHECK(code(json{{"gamma", 1}}) == ErrorCode::MalformedJson);
}

}  // TEST_SUITE
