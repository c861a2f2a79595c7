#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "botverse/errors.hpp"
#include "botverse/ingestion.hpp"
#include "botverse/text.hpp"

namespace botverse {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// "en" accepts "en", "EN" and "en-US".
bool language_matches(const std::string& lang, const std::string& filter) {
  const std::string l = lower(lang), f = lower(filter);
  return l == f || (l.size() > f.size() && l.compare(0, f.size(), f) == 0 && l[f.size()] == '-');
}

void push_unique(std::vector<std::string>& out, const std::string& tag) {
  if (!tag.empty() && std::find(out.begin(), out.end(), tag) == out.end()) out.push_back(tag);
}

std::vector<std::string> collect_topics(const json& record) {
  std::vector<std::string> topics;
  if (auto it = record.find("tags"); it != record.end() && it->is_array())
    for (const auto& t : *it)
      if (t.is_string()) push_unique(topics, t.get<std::string>());
  if (auto it = record.find("facets"); it != record.end() && it->is_array())
    for (const auto& facet : *it) {
      auto features = facet.find("features");
      if (features == facet.end() || !features->is_array()) continue;
      for (const auto& f : *features) {
        auto type = f.find("$type");
        auto tag = f.find("tag");
        if (type != f.end() && type->is_string() && *type == "app.bsky.richtext.facet#tag" &&
            tag != f.end() && tag->is_string())
          push_unique(topics, tag->get<std::string>());
      }
    }
  return topics;
}

}  // namespace

void validate(const StreamConfig& c, bool check_files) {
  if (!(c.sample_rate > 0.0 && c.sample_rate <= 1.0))
    throw Error(ErrorCode::OutOfRange, "sample_rate must be in (0,1]");
  if (c.max_text_len == 0) throw Error(ErrorCode::OutOfRange, "max_text_len must be positive");
  if (!(c.gap_scale >= 0.0) || !std::isfinite(c.gap_scale))
    throw Error(ErrorCode::OutOfRange, "gap_scale must be >= 0");
  if (c.queue_capacity == 0) throw Error(ErrorCode::OutOfRange, "queue_capacity must be positive");
  if (c.reconnect_backoff.initial.count() <= 0 || c.reconnect_backoff.max < c.reconnect_backoff.initial)
    throw Error(ErrorCode::OutOfRange, "reconnect_backoff needs 0 < initial <= max");
  if (c.mode == StreamMode::live && c.endpoint.rfind("ws://", 0) != 0 && c.endpoint.rfind("wss://", 0) != 0)
    throw Error(ErrorCode::InvalidSpec, "live endpoint must be a ws:// or wss:// url");
  if (c.mode == StreamMode::replay) {
    if (c.replay_path.empty()) throw Error(ErrorCode::MissingField, "ingestion.replay");
    if (check_files && !std::filesystem::is_regular_file(c.replay_path))
      throw Error(ErrorCode::Io, "replay file not found: " + c.replay_path.string());
  }
}

StreamConfig stream_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::MalformedJson, "ingestion must be an object");
  StreamConfig c;
  try {
    const std::string mode = j.value("mode", std::string("none"));
    if (mode == "none") {
      c.mode = StreamMode::none;
    } else if (mode == "live") {
      c.mode = StreamMode::live;
      c.endpoint = j.value("endpoint", std::string(kDefaultJetstreamEndpoint));
    } else if (mode == "replay") {
      c.mode = StreamMode::replay;
      if (!j.contains("replay")) throw Error(ErrorCode::MissingField, "ingestion.replay");
      c.replay_path = j.at("replay").get<std::string>();
    } else {
      throw Error(ErrorCode::InvalidSpec, "unknown ingestion mode '" + mode + "'");
    }
    c.sample_rate = j.value("sample_rate", 1.0);
    if (j.contains("language_filter") && !j.at("language_filter").is_null())
      c.language_filter = j.at("language_filter").get<std::vector<std::string>>();
    if (j.contains("reconnect_backoff")) {
      const auto& b = j.at("reconnect_backoff");
      c.reconnect_backoff.initial = std::chrono::milliseconds(b.value("initial_ms", std::int64_t{1000}));
      c.reconnect_backoff.max = std::chrono::milliseconds(b.value("max_ms", std::int64_t{60'000}));
    }
    const auto max_len = j.value("max_text_len", std::int64_t{1000});
    if (max_len <= 0) throw Error(ErrorCode::OutOfRange, "max_text_len must be positive");
    c.max_text_len = static_cast<std::size_t>(max_len);
    c.gap_scale = j.value("gap_scale", 1.0);
    const auto cap = j.value("queue_capacity", std::int64_t{1024});
    if (cap <= 0) throw Error(ErrorCode::OutOfRange, "queue_capacity must be positive");
    c.queue_capacity = static_cast<std::size_t>(cap);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson, std::string("ingestion: ") + e.what());
  }
  validate(c);
  return c;
}

json to_json(const StreamConfig& c) {
  json j;
  switch (c.mode) {
    case StreamMode::none: j["mode"] = "none"; break;
    case StreamMode::live:
      j["mode"] = "live";
      j["endpoint"] = c.endpoint;
      break;
    case StreamMode::replay:
      j["mode"] = "replay";
      j["replay"] = c.replay_path.string();
      break;
  }
  j["sample_rate"] = c.sample_rate;
  j["language_filter"] = c.language_filter ? json(*c.language_filter) : json(nullptr);
  j["reconnect_backoff"] = {{"initial_ms", c.reconnect_backoff.initial.count()},
                            {"max_ms", c.reconnect_backoff.max.count()}};
  j["max_text_len"] = c.max_text_len;
  j["gap_scale"] = c.gap_scale;
  j["queue_capacity"] = c.queue_capacity;
  return j;
}

RawRecord parse_frame(std::string frame, std::int64_t received_at_us) {
  const json j = json::parse(frame, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::ProtocolError, "frame is not a JSON object");
  RawRecord r;
  r.received_at_us = received_at_us;
  if (auto commit = j.find("commit"); commit != j.end() && commit->is_object() && commit->contains("collection") &&
                                      commit->at("collection").is_string())
    r.kind = commit->at("collection").get<std::string>();
  else if (auto kind = j.find("kind"); kind != j.end() && kind->is_string())
    r.kind = kind->get<std::string>();
  else
    r.kind = "unknown";
  r.body = std::move(frame);
  return r;
}

std::optional<ExternalPost> normalize(const RawRecord& raw, const StreamConfig& config, VirtualTime observed_at) {
  if (raw.kind != kPostCollection) return std::nullopt;
  const json j = json::parse(raw.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  auto commit = j.find("commit");
  if (commit == j.end() || !commit->is_object()) return std::nullopt;
  if (commit->value("operation", std::string()) != "create") return std::nullopt;
  if (commit->value("collection", std::string()) != kPostCollection) return std::nullopt;
  auto record = commit->find("record");
  if (record == commit->end() || !record->is_object()) return std::nullopt;
  auto text = record->find("text");
  if (text == record->end() || !text->is_string()) return std::nullopt;

  if (config.language_filter) {
    auto langs = record->find("langs");
    if (langs == record->end() || !langs->is_array()) return std::nullopt;
    bool ok = false;
    for (const auto& l : *langs) {
      if (!l.is_string()) continue;
      for (const auto& f : *config.language_filter)
        if (language_matches(l.get<std::string>(), f)) ok = true;
    }
    if (!ok) return std::nullopt;
  }

  ExternalPost post;
  post.source_id = "at://" + j.value("did", std::string("unknown")) + "/" + kPostCollection + "/" +
                   commit->value("rkey", std::string());
  post.text = utf8_truncate(text->get<std::string>(), config.max_text_len);
  post.observed_at = observed_at;
  if (auto topics = collect_topics(*record); !topics.empty()) post.topics = std::move(topics);
  return post;
}

json to_json(const IngestionCounters& c) {
  return json{{"seen", c.seen},
              {"forwarded", c.forwarded},
              {"sampled_out", c.sampled_out},
              {"dropped", c.dropped},
              {"records", c.records},
              {"protocol_errors", c.protocol_errors},
              {"connect_failures", c.connect_failures},
              {"reconnects", c.reconnects}};
}

IngestionCounters ingestion_counters_from_json(const json& j) {
  IngestionCounters c;
  c.seen = j.value("seen", std::uint64_t{0});
  c.forwarded = j.value("forwarded", std::uint64_t{0});
  c.sampled_out = j.value("sampled_out", std::uint64_t{0});
  c.dropped = j.value("dropped", std::uint64_t{0});
  c.records = j.value("records", std::uint64_t{0});
  c.protocol_errors = j.value("protocol_errors", std::uint64_t{0});
  c.connect_failures = j.value("connect_failures", std::uint64_t{0});
  c.reconnects = j.value("reconnects", std::uint64_t{0});
  return c;
}

void Sampler::offer(ExternalPost post, const Sink& sink) {
  ++counters_.seen;
  // Always draw so the stream position does not depend on the rate.
  const bool keep = rng_.uniform() < rate_;
  if (!keep) {
    ++counters_.sampled_out;
    return;
  }
  if (sink(std::move(post)))
    ++counters_.forwarded;
  else
    ++counters_.dropped;
}

IngestionCounters sample_and_forward(std::span<const ExternalPost> posts, double sample_rate, Rng& rng,
                                     const Sampler::Sink& sink) {
  Sampler sampler(sample_rate, rng);
  for (const auto& p : posts) sampler.offer(p, sink);
  rng = sampler.rng();
  return sampler.counters();
}

namespace {

std::string replay_line(const RawRecord& r) {
  json j = {{"received_at", r.received_at_us}, {"kind", r.kind}, {"body", r.body}};
  return j.dump();
}

}  // namespace

ReplayWriter::ReplayWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
}

void ReplayWriter::write(const RawRecord& record) {
  out_ << replay_line(record) << '\n';
  if (!out_) throw Error(ErrorCode::Io, "write failed: " + path_.string());
}

void ReplayWriter::flush() {
  out_.flush();
  if (!out_) throw Error(ErrorCode::Io, "flush failed: " + path_.string());
}

void record_replay(std::span<const RawRecord> records, const std::filesystem::path& path) {
  ReplayWriter w(path);
  for (const auto& r : records) w.write(r);
  w.flush();
}

std::vector<RawRecord> load_replay(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<RawRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const json j = json::parse(line, nullptr, false);
    auto bad = [&](const std::string& why) {
      return Error(ErrorCode::MalformedLine, "line " + std::to_string(n) + ": " + why);
    };
    if (j.is_discarded() || !j.is_object()) throw bad("not a JSON object");
    auto at = j.find("received_at");
    auto body = j.find("body");
    if (at == j.end() || !at->is_number_integer()) throw bad("received_at must be an integer");
    if (body == j.end()) throw bad("missing body");
    RawRecord r;
    r.received_at_us = at->get<std::int64_t>();
    // Hand-written files may embed the frame as an object.
    r.body = body->is_string() ? body->get<std::string>() : body->dump();
    if (auto kind = j.find("kind"); kind != j.end() && kind->is_string())
      r.kind = kind->get<std::string>();
    else
      r.kind = parse_frame(r.body, r.received_at_us).kind;
    out.push_back(std::move(r));
  }
  if (in.bad()) throw Error(ErrorCode::Io, "read failed: " + path.string());
  return out;
}

std::vector<VirtualTime> replay_times(std::span<const RawRecord> records, double gap_scale) {
  std::vector<VirtualTime> out;
  out.reserve(records.size());
  if (records.empty()) return out;
  const std::int64_t first = records.front().received_at_us;
  std::int64_t prev = 0;
  for (const auto& r : records) {
    const double wall_ms = static_cast<double>(r.received_at_us - first) / 1000.0;
    // Out-of-order stamps never move virtual time backwards.
    const std::int64_t ms = std::max<std::int64_t>(prev, std::llround(wall_ms * gap_scale));
    out.push_back(VirtualTime{ms});
    prev = ms;
  }
  return out;
}

std::int64_t wall_clock_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace botverse
