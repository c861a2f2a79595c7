#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "botverse/domain.hpp"
#include "botverse/rng.hpp"

namespace botverse {

inline constexpr const char* kDefaultJetstreamEndpoint =
    "wss://jetstream2.us-east.bsky.network/subscribe?wantedCollections=app.bsky.feed.post";
inline constexpr const char* kPostCollection = "app.bsky.feed.post";

enum class StreamMode { none, live, replay };

struct BackoffPolicy {
  std::chrono::milliseconds initial{1000};
  std::chrono::milliseconds max{60'000};
};

struct StreamConfig {
  StreamMode mode = StreamMode::none;
  std::string endpoint;                 // live
  std::filesystem::path replay_path;    // replay
  double sample_rate = 1.0;
  std::optional<std::vector<std::string>> language_filter;
  BackoffPolicy reconnect_backoff;
  std::size_t max_text_len = 1000;
  double gap_scale = 1.0;               // virtual ms per recorded wall ms (replay)
  std::size_t queue_capacity = 1024;
};

// Structural checks; `check_files` additionally requires the replay file.
void validate(const StreamConfig& c, bool check_files = false);
StreamConfig stream_config_from_json(const json& j);
json to_json(const StreamConfig& c);

struct RawRecord {
  std::int64_t received_at_us = 0;  // wall clock, microseconds since the Unix epoch
  std::string kind;                 // record collection, or the frame kind for non-commits
  std::string body;                 // frame text exactly as received

  bool operator==(const RawRecord&) const = default;
};

// Builds a RawRecord from one stream frame. Throws Error{ProtocolError} when
// the frame is not a JSON object.
RawRecord parse_frame(std::string frame, std::int64_t received_at_us);

// Post-creation records that pass the language filter become ExternalPosts;
// everything else (likes, follows, deletes, identity) is filtered out.
std::optional<ExternalPost> normalize(const RawRecord& raw, const StreamConfig& config,
                                      VirtualTime observed_at = {});

struct IngestionCounters {
  std::uint64_t seen = 0;
  std::uint64_t forwarded = 0;
  std::uint64_t sampled_out = 0;
  std::uint64_t dropped = 0;
  std::uint64_t records = 0;
  std::uint64_t protocol_errors = 0;
  std::uint64_t connect_failures = 0;
  std::uint64_t reconnects = 0;

  bool operator==(const IngestionCounters&) const = default;
};

json to_json(const IngestionCounters& c);
IngestionCounters ingestion_counters_from_json(const json& j);

// Keeps each post with probability `sample_rate`; forwarded posts go to the
// sink, which returns false when its queue is full (the post is then dropped).
class Sampler {
 public:
  using Sink = std::function<bool(ExternalPost&&)>;

  Sampler(double sample_rate, Rng rng, IngestionCounters counters = {})
      : rate_(sample_rate), rng_(rng), counters_(counters) {}

  void offer(ExternalPost post, const Sink& sink);
  const IngestionCounters& counters() const { return counters_; }
  IngestionCounters& counters() { return counters_; }
  const Rng& rng() const { return rng_; }

 private:
  double rate_;
  Rng rng_;
  IngestionCounters counters_;
};

IngestionCounters sample_and_forward(std::span<const ExternalPost> posts, double sample_rate, Rng& rng,
                                     const Sampler::Sink& sink);

// NDJSON replay files: {"received_at": <us>, "kind": "...", "body": "<frame text>"} per line.
class ReplayWriter {
 public:
  explicit ReplayWriter(const std::filesystem::path& path);
  void write(const RawRecord& record);
  void flush();

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

void record_replay(std::span<const RawRecord> records, const std::filesystem::path& path);
// Throws Error{Io} or Error{MalformedLine} with the 1-based line number.
std::vector<RawRecord> load_replay(const std::filesystem::path& path);
// Virtual arrival times preserving inter-arrival gaps scaled by `gap_scale`;
// the first record lands at t = 0.
std::vector<VirtualTime> replay_times(std::span<const RawRecord> records, double gap_scale);

std::int64_t wall_clock_us();

// Long-lived subscription to a JSON-per-frame WebSocket stream (ws:// or
// wss://). Reconnects with capped exponential backoff and full jitter. The
// client sends nothing after the subscription handshake.
class LiveStream {
 public:
  using RecordHandler = std::function<void(RawRecord&&)>;

  LiveStream(StreamConfig config, RecordHandler on_record, std::uint64_t jitter_seed = 0);
  ~LiveStream();
  LiveStream(const LiveStream&) = delete;
  LiveStream& operator=(const LiveStream&) = delete;

  void start();
  // Returns once the reader thread has exited.
  void stop();

  IngestionCounters counters() const;
  bool connected() const { return connected_.load(); }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::atomic<bool> connected_{false};
};

}  // namespace botverse
