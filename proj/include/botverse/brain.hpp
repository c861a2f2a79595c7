#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "botverse/domain.hpp"
#include "botverse/rng.hpp"

namespace botverse {

enum class TaskKind { compose_post, compose_reply, compose_repost_comment, compose_image_prompt };

std::string_view to_string(TaskKind k);
TaskKind task_kind_from_string(std::string_view s);

struct Task {
  TaskKind kind = TaskKind::compose_post;
  std::optional<std::string> target;  // post id for reply / repost comment
  std::optional<std::string> topic;   // image prompt subject

  bool operator==(const Task&) const = default;
};

struct DecodeParams {
  double temperature = 0.9;
  int max_tokens = 120;

  bool operator==(const DecodeParams&) const = default;
};

using DecodeTable = std::map<TaskKind, DecodeParams>;

// Posts 0.9, replies and repost comments 0.7, image prompts 0.8.
DecodeTable default_decode_table();

// Generated text never exceeds this many code points.
constexpr std::size_t kCharsPerToken = 4;
inline std::size_t max_chars(const DecodeParams& d) {
  return kCharsPerToken * static_cast<std::size_t>(d.max_tokens);
}

struct ContextItem {
  std::string post_id;
  std::string text;
  std::int64_t likes = 0;
  std::int64_t reposts = 0;

  bool operator==(const ContextItem&) const = default;
};

using Stimulus = std::variant<ExternalPost, Post>;

struct Campaign {
  std::string narrative_id;
  std::string text;

  bool operator==(const Campaign&) const = default;
};

struct PromptBundle {
  Persona persona;
  std::string system_text;
  std::vector<ContextItem> context_items;
  std::optional<Stimulus> stimulus;
  Task task;
  DecodeParams decode;
  std::optional<Campaign> campaign;

  bool operator==(const PromptBundle&) const = default;
};

json to_json(const PromptBundle& b);

// Identity sentence, psychographic sentence, one sentence per trait in key
// order, then any extension attributes and the archetype.
std::string render_system_text(const Persona& persona);

// Pure function of its inputs; `memory_top_k` is taken in ranked order.
PromptBundle build_prompt(const Persona& persona, std::span<const ContextItem> memory_top_k,
                          std::optional<Stimulus> stimulus, Task task,
                          std::optional<Campaign> campaign = std::nullopt,
                          const DecodeTable& decode = default_decode_table());

// The user-role message: task instruction followed by the serialized context.
std::string render_user_message(const PromptBundle& bundle);

struct BackendDescriptor {
  std::string name;
  std::string endpoint;  // base URL of an OpenAI-compatible API, e.g. http://host:8000/v1
  std::string model_id;
  std::chrono::milliseconds timeout{30'000};
  int max_retries = 2;
  std::chrono::milliseconds retry_backoff{200};
  bool degraded = false;
};

BackendDescriptor backend_from_json(const json& j);
json to_json(const BackendDescriptor& b);
// BOTVERSE_BACKEND_URL / BOTVERSE_BACKEND_MODEL override endpoint and model.
BackendDescriptor with_env_overrides(BackendDescriptor b);
// Probes the endpoint once; marks the descriptor degraded when unreachable.
BackendDescriptor register_backend(BackendDescriptor b);

struct GenerationResult {
  std::string text;
  std::string backend;
  std::chrono::microseconds latency{0};
  bool truncated = false;
};

// One chat-completion request with retry and timeout. Throws
// Error{BackendTimeout, BackendRejected, AllRetriesExhausted}.
GenerationResult generate(const PromptBundle& bundle, const BackendDescriptor& backend);

// Offline template-bank generator; a pure function of (bundle, rng state).
GenerationResult stub_generate(const PromptBundle& bundle, Rng& rng);

std::string narrative_token(std::string_view narrative_id);

class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string name() const = 0;
  // True when calls may block on the network; the engine then runs them on a
  // GenerationPool instead of inline.
  virtual bool is_remote() const = 0;
  virtual GenerationResult generate(const PromptBundle& bundle, Rng& rng) = 0;
};

class StubGenerator final : public TextGenerator {
 public:
  std::string name() const override { return "stub"; }
  bool is_remote() const override { return false; }
  GenerationResult generate(const PromptBundle& bundle, Rng& rng) override {
    return stub_generate(bundle, rng);
  }
};

class HttpGenerator final : public TextGenerator {
 public:
  explicit HttpGenerator(BackendDescriptor backend) : backend_(std::move(backend)) {}
  std::string name() const override { return backend_.name; }
  bool is_remote() const override { return true; }
  GenerationResult generate(const PromptBundle& bundle, Rng&) override {
    return botverse::generate(bundle, backend_);
  }
  const BackendDescriptor& backend() const { return backend_; }

 private:
  BackendDescriptor backend_;
};

class Renderer {
 public:
  virtual ~Renderer() = default;
  // Returns an opaque image reference. Throws Error{RendererUnavailable}.
  virtual std::string render(const std::string& prompt) = 0;
};

// Writes the prompt to <dir>/<sha256>.txt; the reference is the hash.
class StubRenderer final : public Renderer {
 public:
  explicit StubRenderer(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::string render(const std::string& prompt) override;

 private:
  std::filesystem::path dir_;
};

class UnavailableRenderer final : public Renderer {
 public:
  std::string render(const std::string&) override;
};

struct ImagePrompt {
  std::string prompt;
  std::optional<std::string> image_ref;
  bool degraded = false;
};

ImagePrompt compose_image_prompt(const Persona& persona, const std::string& topic,
                                 TextGenerator& generator, Rng& rng, Renderer* renderer,
                                 const DecodeTable& decode = default_decode_table());

// Bounded worker pool for remote generation. Jobs run off the caller's
// thread; completions are handed to the job's callback.
class GenerationPool {
 public:
  using Job = std::function<void()>;

  explicit GenerationPool(std::size_t concurrency = 8);
  ~GenerationPool();
  GenerationPool(const GenerationPool&) = delete;
  GenerationPool& operator=(const GenerationPool&) = delete;

  void submit(Job job);
  std::size_t in_flight() const { return in_flight_.load(); }
  // Blocks until every submitted job finished.
  void drain();

 private:
  void worker();

  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<Job> jobs_;
  std::vector<std::thread> threads_;
  std::atomic<std::size_t> in_flight_{0};
  bool stopping_ = false;
};

}  // namespace botverse
