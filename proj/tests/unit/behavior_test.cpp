#include <doctest.h>

#include <cmath>
#include <numeric>

#include "botverse/behavior.hpp"
#include "botverse/errors.hpp"
#include "oracles.hpp"

using namespace botverse;

TEST_SUITE("behavior") {

TEST_CASE("dna letters round trip") {
  const auto codes = parse_dna("PRSLIW");
  CHECK(codes.size() == 6);
  CHECK(dna_string(codes) == "PRSLIW");
  CHECK(needs_target(ActionCode::reply));
  CHECK(needs_target(ActionCode::like));
  CHECK_FALSE(needs_target(ActionCode::post));
  try {
    parse_dna("PXQ");
    FAIL("expected InvalidSpec");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidSpec);
  }
}

TEST_CASE("dna program validation") {
  DnaProgram p;
  p.sequence = parse_dna("WWW");
  CHECK_THROWS_AS(validate(p), Error);
  p.sequence = parse_dna("PW");
  p.mutation_rate = 1.5;
  CHECK_THROWS_AS(validate(p), Error);
  p.mutation_rate = 0.1;
  validate(p);
  CHECK(dna_program_from_json(to_json(p)) == p);
}

TEST_CASE("temporal model validation") {
  TemporalModel m = default_temporal_model();
  validate(m);
  CHECK(*std::max_element(m.circadian.begin(), m.circadian.end()) == 1.0);
  CHECK(temporal_model_from_json(to_json(m)) == m);
  TemporalModel bad = m;
  bad.circadian[3] = 0.0;
  CHECK_THROWS_AS(validate(bad), Error);
  bad = m;
  bad.base_rate = 0;
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("session arrivals follow the circadian curve") {
  const TemporalModel m = default_temporal_model();
  Rng rng(5);
  std::vector<double> hourly(24, 0.0);
  VirtualTime t{0};
  const int days = 2000;
  std::int64_t sessions = 0;
  while (true) {
    VirtualTime next = next_session_start(t, m, rng);
    REQUIRE(t < next);
    t = next;
    if (t.ms >= days * kMsPerDay) break;
    hourly[static_cast<std::size_t>(hour_of_day(t))] += 1;
    ++sessions;
  }
  const double mean_c = std::accumulate(m.circadian.begin(), m.circadian.end(), 0.0) / 24.0;
  const double expected = m.base_rate * mean_c * days;
  CHECK(std::abs(static_cast<double>(sessions) - expected) < 4.0 * std::sqrt(expected));
  std::vector<double> curve(m.circadian.begin(), m.circadian.end());
  CHECK(oracle::pearson(hourly, curve) > 0.99);
  for (std::size_t h = 0; h < 24; ++h) {
    const double e = m.base_rate * m.circadian[h] / 24.0 * days;
    CHECK(std::abs(hourly[h] - e) < 5.0 * std::sqrt(e));
  }
}

TEST_CASE("sessions step the program and skip waits") {
  TemporalModel m = default_temporal_model();
  DnaProgram p;
  p.sequence = parse_dna("PWRL");
  p.mutation_rate = 0.0;
  Rng rng(1);
  std::string emitted;
  VirtualTime start{1000};
  for (int s = 0; s < 50; ++s) {
    const auto session = sample_session(p, m, start, rng);
    REQUIRE_FALSE(session.empty());
    // A leading W delays the first action by one gap.
    CHECK(start <= session.front().at);
    for (std::size_t i = 1; i < session.size(); ++i) CHECK(session[i - 1].at < session[i].at);
    for (const auto& a : session) {
      CHECK(a.code != ActionCode::wait);
      emitted += to_char(a.code);
    }
    start = VirtualTime{session.back().at.ms + 1};
  }
  // Without mutation the emitted codes are the program with W removed, cycled.
  for (std::size_t i = 0; i < emitted.size(); ++i) CHECK(emitted[i] == "PRL"[i % 3]);
}

TEST_CASE("session lengths and gaps match their lognormals") {
  TemporalModel m = default_temporal_model();
  DnaProgram p;
  p.sequence = parse_dna("PRSL");
  p.mutation_rate = 0.0;
  Rng rng(99);
  std::vector<double> gaps;
  double total_len = 0;
  const int sessions = 4000;
  for (int s = 0; s < sessions; ++s) {
    const auto session = sample_session(p, m, VirtualTime{0}, rng);
    total_len += static_cast<double>(session.size());
    for (std::size_t i = 1; i < session.size(); ++i)
      gaps.push_back(static_cast<double>(session[i].at.ms - session[i - 1].at.ms) / 1000.0);
  }
  const auto ref = oracle::lognormal_reference(m.intra_gap.mu, m.intra_gap.sigma, gaps.size(), 12345);
  const auto ks = oracle::ks_two_sample(gaps, ref, 0.01);
  CHECK_MESSAGE(!ks.reject, "D=" << ks.d << " crit=" << ks.critical);
  CHECK(oracle::coefficient_of_variation(gaps) > 1.0);
  // ceil of a lognormal with median 4: mean sits a little above exp(mu + sigma^2/2).
  CHECK(total_len / sessions > 4.0);
  CHECK(total_len / sessions < 6.0);
}

TEST_CASE("mutation draws only non-wait codes") {
  TemporalModel m = default_temporal_model();
  DnaProgram p;
  p.sequence = parse_dna("PW");
  p.mutation_rate = 1.0;
  p.mutation_weights = {{ActionCode::like, 1.0}};
  Rng rng(3);
  for (int s = 0; s < 100; ++s)
    for (const auto& a : sample_session(p, m, VirtualTime{0}, rng)) CHECK(a.code == ActionCode::like);
}

TEST_CASE("choose_target samples in proportion to score") {
  std::vector<TargetCandidate> feed = {{"a", 1.0, std::nullopt}, {"b", 2.0, std::nullopt}, {"c", 3.0, "N1"}};
  Persona benign;
  benign.handle = "x";
  Persona disinfo = benign;
  disinfo.archetype = Archetype::disinformative;
  TargetBias bias{"N1", 3.0};
  Rng rng(8);
  const int draws = 60000;
  std::map<std::string, int> plain, biased, benign_with_bias;
  for (int i = 0; i < draws; ++i) {
    ++plain[*choose_target(ActionCode::like, feed, disinfo, TargetBias{}, rng)];
    ++biased[*choose_target(ActionCode::repost, feed, disinfo, bias, rng)];
    ++benign_with_bias[*choose_target(ActionCode::reply, feed, benign, bias, rng)];
  }
  auto frac = [&](std::map<std::string, int>& m, const char* k) { return m[k] / static_cast<double>(draws); };
  CHECK(frac(plain, "a") == doctest::Approx(1.0 / 6).epsilon(0.05));
  CHECK(frac(plain, "c") == doctest::Approx(3.0 / 6).epsilon(0.03));
  // Bias multiplies the narrative item's weight: 9 / 12.
  CHECK(frac(biased, "c") == doctest::Approx(9.0 / 12).epsilon(0.03));
  CHECK(frac(benign_with_bias, "c") == doctest::Approx(3.0 / 6).epsilon(0.03));

  CHECK_FALSE(choose_target(ActionCode::post, feed, benign, bias, rng));
  CHECK_FALSE(choose_target(ActionCode::like, {}, benign, bias, rng));
}

}  // TEST_SUITE
