#include "botverse/behavior.hpp"

#include <algorithm>
#include <cmath>

#include "botverse/errors.hpp"

namespace botverse {

char to_char(ActionCode c) { return static_cast<char>(c); }

ActionCode action_code_from_char(char c) {
  switch (c) {
    case 'P': return ActionCode::post;
    case 'R': return ActionCode::reply;
    case 'S': return ActionCode::repost;
    case 'L': return ActionCode::like;
    case 'I': return ActionCode::ingest_react;
    case 'W': return ActionCode::wait;
    default: throw Error(ErrorCode::InvalidSpec, std::string("unknown action code '") + c + "'");
  }
}

std::vector<ActionCode> parse_dna(std::string_view letters) {
  std::vector<ActionCode> out;
  for (char c : letters) {
    if (c == ' ' || c == ',' || c == '-' || c == '>') continue;
    out.push_back(action_code_from_char(c));
  }
  return out;
}

std::string dna_string(const std::vector<ActionCode>& codes) {
  std::string s;
  for (auto c : codes) s.push_back(to_char(c));
  return s;
}

bool needs_target(ActionCode c) {
  return c == ActionCode::reply || c == ActionCode::repost || c == ActionCode::like;
}

void validate(const DnaProgram& p) {
  if (p.sequence.empty()) throw Error(ErrorCode::InvalidSpec, "dna.sequence: empty");
  if (std::all_of(p.sequence.begin(), p.sequence.end(),
                  [](ActionCode c) { return c == ActionCode::wait; }))
    throw Error(ErrorCode::InvalidSpec, "dna.sequence: needs at least one non-W code");
  if (p.position >= p.sequence.size()) throw Error(ErrorCode::InvalidSpec, "dna.position");
  if (!(p.mutation_rate >= 0.0 && p.mutation_rate <= 1.0))
    throw Error(ErrorCode::InvalidSpec, "dna.mutation_rate");
  for (const auto& [code, w] : p.mutation_weights) {
    if (code == ActionCode::wait) throw Error(ErrorCode::InvalidSpec, "dna.mutation_weights: W");
    if (!(w >= 0.0)) throw Error(ErrorCode::InvalidSpec, "dna.mutation_weights");
  }
}

json to_json(const DnaProgram& p) {
  json weights = json::object();
  for (const auto& [code, w] : p.mutation_weights) weights[std::string(1, to_char(code))] = w;
  return json{{"sequence", dna_string(p.sequence)},
              {"position", p.position},
              {"mutation_rate", p.mutation_rate},
              {"mutation_weights", weights}};
}

DnaProgram dna_program_from_json(const json& j) {
  DnaProgram p;
  try {
    p.sequence = parse_dna(j.at("sequence").get<std::string>());
    p.position = j.value("position", std::size_t{0});
    p.mutation_rate = j.value("mutation_rate", 0.05);
    if (auto it = j.find("mutation_weights"); it != j.end())
      for (const auto& [k, v] : it->items()) {
        if (k.size() != 1) throw Error(ErrorCode::InvalidSpec, "dna.mutation_weights key '" + k + "'");
        p.mutation_weights[action_code_from_char(k[0])] = v.get<double>();
      }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("dna: ") + e.what());
  }
  validate(p);
  return p;
}

std::array<double, 24> default_circadian() {
  return {0.30, 0.18, 0.10, 0.06, 0.05, 0.07, 0.15, 0.30, 0.45, 0.55, 0.62, 0.72,
          0.85, 0.80, 0.65, 0.58, 0.60, 0.68, 0.80, 0.92, 1.00, 0.95, 0.75, 0.50};
}

TemporalModel default_temporal_model() {
  TemporalModel m;
  m.base_rate = 6.0;
  m.circadian = default_circadian();
  m.session_len = LogNormal{std::log(4.0), 0.6};
  m.intra_gap = LogNormal{std::log(45.0), 1.0};
  return m;
}

void validate(const TemporalModel& m) {
  if (!(m.base_rate > 0.0) || !std::isfinite(m.base_rate))
    throw Error(ErrorCode::InvalidSpec, "temporal.base_rate");
  double peak = 0.0;
  for (std::size_t h = 0; h < 24; ++h) {
    const double c = m.circadian[h];
    if (!(c >= kMinCircadian && c <= 1.0))
      throw Error(ErrorCode::InvalidSpec, "temporal.circadian[" + std::to_string(h) + "]");
    peak = std::max(peak, c);
  }
  if (peak != 1.0) throw Error(ErrorCode::InvalidSpec, "temporal.circadian: max must be 1");
  for (const auto* d : {&m.session_len, &m.intra_gap})
    if (!std::isfinite(d->mu) || !(d->sigma > 0.0) || !std::isfinite(d->sigma))
      throw Error(ErrorCode::InvalidSpec, "temporal: lognormal parameters");
}

json to_json(const TemporalModel& m) {
  return json{{"base_rate", m.base_rate},
              {"circadian", m.circadian},
              {"session_len", {{"mu", m.session_len.mu}, {"sigma", m.session_len.sigma}}},
              {"intra_gap", {{"mu", m.intra_gap.mu}, {"sigma", m.intra_gap.sigma}}}};
}

TemporalModel temporal_model_from_json(const json& j) {
  TemporalModel m = default_temporal_model();
  try {
    m.base_rate = j.value("base_rate", m.base_rate);
    if (auto it = j.find("circadian"); it != j.end()) {
      if (!it->is_array() || it->size() != 24)
        throw Error(ErrorCode::InvalidSpec, "temporal.circadian: expected 24 values");
      for (std::size_t h = 0; h < 24; ++h) m.circadian[h] = it->at(h).get<double>();
    }
    auto read_lognormal = [&](const char* key, LogNormal& d) {
      auto it = j.find(key);
      if (it == j.end()) return;
      if (it->contains("median")) {
        d.mu = std::log(it->at("median").get<double>());
      } else {
        d.mu = it->value("mu", d.mu);
      }
      d.sigma = it->value("sigma", d.sigma);
    };
    read_lognormal("session_len", m.session_len);
    read_lognormal("intra_gap", m.intra_gap);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("temporal: ") + e.what());
  }
  validate(m);
  return m;
}

int hour_of_day(VirtualTime t) {
  return static_cast<int>((t.ms % kMsPerDay + kMsPerDay) % kMsPerDay / kMsPerHour);
}

VirtualTime next_session_start(VirtualTime now, const TemporalModel& model, Rng& rng) {
  const double peak = *std::max_element(model.circadian.begin(), model.circadian.end());
  const double peak_rate_per_ms = model.base_rate / static_cast<double>(kMsPerDay) * peak;
  double t = static_cast<double>(now.ms);
  while (true) {
    t += rng.exponential(peak_rate_per_ms);
    const auto candidate = VirtualTime{static_cast<std::int64_t>(std::floor(t))};
    if (rng.uniform() * peak < model.circadian[hour_of_day(candidate)]) break;
  }
  return VirtualTime{std::max(now.ms + 1, static_cast<std::int64_t>(std::ceil(t)))};
}

namespace {

std::int64_t gap_ms(const TemporalModel& model, Rng& rng) {
  const double seconds = rng.lognormal(model.intra_gap.mu, model.intra_gap.sigma);
  return std::max<std::int64_t>(1, std::llround(seconds * 1000.0));
}

ActionCode mutate(const DnaProgram& program, Rng& rng) {
  ActionWeights weights = program.mutation_weights;
  if (weights.empty())
    for (auto c : program.sequence)
      if (c != ActionCode::wait) weights[c] += 1.0;
  double total = 0.0;
  for (const auto& [c, w] : weights) total += w;
  double u = rng.uniform() * total;
  for (const auto& [c, w] : weights) {
    if (u < w) return c;
    u -= w;
  }
  return weights.rbegin()->first;
}

}  // namespace

std::vector<TimedAction> sample_session(DnaProgram& program, const TemporalModel& model,
                                        VirtualTime start, Rng& rng) {
  const double drawn = rng.lognormal(model.session_len.mu, model.session_len.sigma);
  const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(drawn)));
  const std::size_t len = program.sequence.size();

  std::vector<TimedAction> out;
  out.reserve(n);
  std::int64_t t = start.ms;
  for (std::size_t i = 0; i < n; ++i) {
    int gaps = i == 0 ? 0 : 1;
    while (program.sequence[program.position] == ActionCode::wait) {
      ++gaps;
      program.position = (program.position + 1) % len;
    }
    ActionCode code = program.sequence[program.position];
    program.position = (program.position + 1) % len;
    if (rng.bernoulli(program.mutation_rate)) code = mutate(program, rng);
    for (int g = 0; g < gaps; ++g) t += gap_ms(model, rng);
    out.push_back({code, VirtualTime{t}});
  }
  return out;
}

std::optional<std::string> choose_target(ActionCode code, const std::vector<TargetCandidate>& feed,
                                         const Persona& persona, const TargetBias& bias, Rng& rng) {
  if (!needs_target(code) || feed.empty()) return std::nullopt;
  if (feed.size() == 1) return feed.front().post_id;

  const bool biased =
      persona.archetype == Archetype::disinformative && bias.active_narrative.has_value();
  std::vector<double> weights;
  weights.reserve(feed.size());
  double total = 0.0;
  for (const auto& c : feed) {
    double w = std::max(0.0, c.score);
    if (biased && c.narrative_id == bias.active_narrative) w *= bias.factor;
    weights.push_back(w);
    total += w;
  }
  if (!(total > 0.0)) return feed[rng.below(feed.size())].post_id;

  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < feed.size(); ++i) {
    if (u < weights[i]) return feed[i].post_id;
    u -= weights[i];
  }
  return feed.back().post_id;
}

}  // namespace botverse
