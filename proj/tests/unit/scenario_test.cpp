#include <doctest.h>

#include <set>

#include "botverse/errors.hpp"
#include "botverse/scenario.hpp"
#include "support.hpp"

using namespace botverse;

namespace {

std::string invalid_path(const json& j) {
  try {
    scenario_from_json(j);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidScenario);
    return e.detail();
  }
  FAIL("expected InvalidScenario");
  return {};
}

}  // namespace

TEST_SUITE("scenario") {

TEST_CASE("desk scenario loads") {
  const auto c = testing::desk();
  CHECK(c.name == "desk");
  CHECK(c.duration == VirtualTime{6 * kMsPerHour});
  REQUIRE(c.populations.size() == 2);
  CHECK(c.populations[0].count + c.populations[1].count == 50);
  CHECK(c.populations[0].count * 3 == c.populations[1].count * 7);
  CHECK(c.ingestion.mode == StreamMode::replay);
  CHECK(std::filesystem::exists(c.ingestion.replay_path));
  CHECK(c.seed == 42u);
  REQUIRE(c.narratives.size() == 1);
  CHECK(c.narratives[0].narrative_id == "N1");
  validate(c);
  CHECK(scenario_hash(c) == scenario_hash(testing::desk()));
}

TEST_CASE("durations") {
  CHECK(parse_duration(json("90s")) == VirtualTime{90'000});
  CHECK(parse_duration(json("30m")) == VirtualTime{1'800'000});
  CHECK(parse_duration(json("6h")) == VirtualTime{6 * kMsPerHour});
  CHECK(parse_duration(json("7d")) == VirtualTime{7 * kMsPerDay});
  CHECK(parse_duration(json(1234)) == VirtualTime{1234});
  CHECK_THROWS_AS(parse_duration(json("soon")), Error);
  CHECK_THROWS_AS(parse_duration(json(-1)), Error);
}

TEST_CASE("validation errors name the offending field") {
  json base = testing::small_scenario_json();
  json j = base;
  j.erase("duration");
  CHECK(invalid_path(j).find("duration") == 0);

  j = base;
  j["populations"][1]["count"] = -2;
  CHECK(invalid_path(j).find("populations[1].count") == 0);

  j = base;
  j["populations"][0]["persona"] = {{"gender", {{"values", {"a", "b"}}, {"weights", {1.0}}}}};
  CHECK(invalid_path(j).find("populations[0].persona.gender") == 0);

  j = base;
  j["populations"][0]["dna"] = "PXZ";
  CHECK(invalid_path(j).find("populations[0].dna") == 0);

  j = base;
  j["ingestion"] = {{"mode", "replay"}, {"sample_rate", 2.0}, {"replay", "x.ndjson"}};
  CHECK(invalid_path(j).find("ingestion") == 0);
}

TEST_CASE("population generation is deterministic and follows the pools") {
  PopulationSpec spec = population_from_json(json{
      {"archetype", "benign"},
      {"count", 4000},
      {"handle_base", "c"},
      {"persona",
       {{"age", {{"min", 20}, {"max", 29}}},
        {"gender", {{"values", {"f", "m"}}, {"weights", {3, 1}}}},
        {"traits", {{"tone", {{"values", {"dry"}}}}}}}}});
  Rng r1(3), r2(3);
  const auto a = generate_population(spec, r1);
  const auto b = generate_population(spec, r2);
  CHECK(a == b);
  REQUIRE(a.size() == 4000);
  CHECK(a.front().persona.handle == "c_001");
  std::set<std::string> handles;
  int female = 0;
  for (const auto& s : a) {
    handles.insert(s.persona.handle);
    REQUIRE(s.persona.age);
    CHECK(*s.persona.age >= 20);
    CHECK(*s.persona.age <= 29);
    if (s.persona.gender == "f") ++female;
    CHECK(s.persona.behavioral_traits.at("tone") == "dry");
    CHECK(s.persona.archetype == Archetype::benign);
  }
  CHECK(handles.size() == 4000);
  CHECK(female / 4000.0 == doctest::Approx(0.75).epsilon(0.05));

  Rng r3(3);
  const auto later = generate_population(spec, r3, 4001);
  CHECK(later.front().persona.handle == "c_4001");
}

TEST_CASE("agent specs round trip and circadian shift") {
  const auto c = testing::desk();
  Rng rng(1);
  const auto specs = generate_population(c.populations, rng);
  CHECK(specs.size() == 50);
  CHECK(agent_spec_from_json(to_json(specs[7])) == specs[7]);

  TemporalModel m = default_temporal_model();
  const TemporalModel s = shifted(m, 9);
  for (int h = 0; h < 24; ++h) CHECK(s.circadian[static_cast<std::size_t>(h)] == m.circadian[static_cast<std::size_t>((h + 9) % 24)]);
  CHECK(shifted(m, 0) == m);
}

}  // TEST_SUITE
