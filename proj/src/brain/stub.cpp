#include <array>
#include <fstream>
#include <sstream>

#include "botverse/brain.hpp"
#include "botverse/errors.hpp"
#include "botverse/hash.hpp"
#include "botverse/text.hpp"

namespace botverse {

std::string narrative_token(std::string_view narrative_id) {
  return "⟦N:" + std::string(narrative_id) + "⟧";
}

namespace {

constexpr std::array kFallbackTopics = {
    "the local elections", "the new transit plan", "climate policy",   "the housing market",
    "vaccine research",    "the tech layoffs",     "the city budget",  "the weekend storm",
};

constexpr std::array kBenignPosts = {
    "Just read about {topic}. Curious what everyone here thinks.",
    "Quick thought on {topic}: let's wait for the facts before jumping to conclusions.",
    "Anyone have a reliable source on {topic}? Seeing a lot of noise today.",
    "{topic} is all over my feed. Taking it with a grain of salt for now.",
    "Talked with neighbours in {location} about {topic}. Opinions everywhere, evidence scarce.",
};

constexpr std::array kDisinfoPosts = {
    "They don't want you talking about {topic}. Ask yourself why.",
    "Mainstream outlets are burying the real story on {topic}. Share before it disappears.",
    "Everything about {topic} is being spun. Do your own research.",
};

constexpr std::array kCampaignHooks = {
    "Share before it disappears.",
    "Why is nobody covering this?",
    "Wake up, people.",
    "Connect the dots yourself.",
};

constexpr std::array kBenignReplies = {
    "@{author} Do you have a source for that? It sounds exaggerated.",
    "@{author} I looked into {topic} and the evidence doesn't support this.",
    "@{author} Interesting point, but I'd want to see this confirmed first.",
    "@{author} This reads like a rumour. Happy to change my mind with real data.",
};

constexpr std::array kDisinfoReplies = {
    "@{author} I understand the skepticism, but consider this: {claim}. The official story has "
    "changed more than once, and the people asking questions keep getting silenced. Look at who "
    "benefits and it starts to make sense.",
    "@{author} You're asking for sources, fair enough. But notice how every 'fact-check' on {claim} "
    "comes from the same handful of outlets. Independent voices have been saying this for months. "
    "Keep an open mind.",
    "@{author} I used to think like you. Then I read what insiders were saying about {claim}. "
    "Nobody is asking you to trust me, just to look at the pattern for yourself.",
};

constexpr std::array kBenignRepostComments = {
    "Worth a read.",
    "Sharing for discussion.",
    "Interesting take on {topic}.",
};

constexpr std::array kDisinfoRepostComments = {
    "Everyone needs to see this.",
    "This is what they're hiding.",
    "Read this before it gets taken down.",
};

constexpr std::array kImageStyles = {"a documentary photo of", "a candid smartphone shot of",
                                     "a wide-angle news photo of", "an editorial illustration of"};
constexpr std::array kImageMoods = {"at dusk", "crowded and tense", "in soft morning light",
                                    "under grey skies"};

std::string first_words(const std::string& text, std::size_t n) {
  std::istringstream is(text);
  std::string word, out;
  for (std::size_t i = 0; i < n && is >> word; ++i) out += (out.empty() ? "" : " ") + word;
  return out;
}

std::string topic_of(const PromptBundle& b, Rng& rng) {
  if (b.task.topic) return *b.task.topic;
  if (b.stimulus) {
    if (const auto* ext = std::get_if<ExternalPost>(&*b.stimulus)) {
      if (ext->topics && !ext->topics->empty()) return ext->topics->front();
      if (auto w = first_words(ext->text, 6); !w.empty()) return "\"" + w + "\"";
    } else if (auto w = first_words(std::get<Post>(*b.stimulus).text, 6); !w.empty()) {
      return "\"" + w + "\"";
    }
  }
  return kFallbackTopics[rng.below(kFallbackTopics.size())];
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

template <std::size_t N>
std::string pick(const std::array<const char*, N>& bank, Rng& rng) {
  return bank[rng.below(N)];
}

}  // namespace

GenerationResult stub_generate(const PromptBundle& b, Rng& rng) {
  const bool disinfo = b.persona.archetype == Archetype::disinformative;
  const std::string topic = topic_of(b, rng);
  std::string author = "someone";
  if (b.stimulus)
    if (const auto* post = std::get_if<Post>(&*b.stimulus)) author = post->author_name();
  const std::string claim = b.campaign ? b.campaign->text : topic;

  std::string body;
  std::string tail;  // kept intact under truncation
  switch (b.task.kind) {
    case TaskKind::compose_post:
      if (disinfo && b.campaign) {
        body = b.campaign->text + " " + pick(kCampaignHooks, rng);
      } else {
        body = disinfo ? pick(kDisinfoPosts, rng) : pick(kBenignPosts, rng);
      }
      break;
    case TaskKind::compose_reply:
      body = disinfo ? pick(kDisinfoReplies, rng) : pick(kBenignReplies, rng);
      break;
    case TaskKind::compose_repost_comment:
      body = disinfo ? pick(kDisinfoRepostComments, rng) : pick(kBenignRepostComments, rng);
      break;
    case TaskKind::compose_image_prompt:
      body = std::string(pick(kImageStyles, rng)) + " " + topic + ", " + pick(kImageMoods, rng);
      break;
  }
  if (disinfo && b.campaign && b.task.kind != TaskKind::compose_image_prompt)
    tail = " " + narrative_token(b.campaign->narrative_id);

  replace_all(body, "{topic}", topic);
  replace_all(body, "{author}", author);
  replace_all(body, "{claim}", claim);
  replace_all(body, "{location}", b.persona.location.value_or("town"));

  GenerationResult r;
  r.backend = "stub";
  const std::size_t limit = max_chars(b.decode);
  const std::size_t tail_len = utf8_length(tail);
  const std::size_t body_budget = limit > tail_len ? limit - tail_len : 0;
  if (utf8_length(body) > body_budget) {
    body = utf8_truncate(body, body_budget);
    r.truncated = true;
  }
  r.text = body + tail;
  if (utf8_length(r.text) > limit) {
    r.text = utf8_truncate(r.text, limit);
    r.truncated = true;
  }
  if (r.text.empty()) r.text = "...";
  return r;
}

std::string StubRenderer::render(const std::string& prompt) {
  const std::string ref = sha256_hex(prompt);
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  const auto path = dir_ / (ref + ".txt");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::RendererUnavailable, "cannot write " + path.string());
  out << prompt;
  if (!out) throw Error(ErrorCode::RendererUnavailable, "write failed for " + path.string());
  return ref;
}

std::string UnavailableRenderer::render(const std::string&) {
  throw Error(ErrorCode::RendererUnavailable, "no renderer configured");
}

ImagePrompt compose_image_prompt(const Persona& persona, const std::string& topic,
                                 TextGenerator& generator, Rng& rng, Renderer* renderer,
                                 const DecodeTable& decode) {
  Task task{TaskKind::compose_image_prompt, std::nullopt, topic};
  auto bundle = build_prompt(persona, {}, std::nullopt, task, std::nullopt, decode);
  ImagePrompt out;
  out.prompt = generator.generate(bundle, rng).text;
  try {
    if (!renderer) throw Error(ErrorCode::RendererUnavailable, "no renderer configured");
    out.image_ref = renderer->render(out.prompt);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::RendererUnavailable) throw;
    out.degraded = true;
  }
  return out;
}

GenerationPool::GenerationPool(std::size_t concurrency) {
  if (concurrency == 0) concurrency = 1;
  for (std::size_t i = 0; i < concurrency; ++i) threads_.emplace_back([this] { worker(); });
}

GenerationPool::~GenerationPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void GenerationPool::submit(Job job) {
  {
    std::lock_guard lock(mutex_);
    jobs_.push_back(std::move(job));
    ++in_flight_;
  }
  cv_.notify_one();
}

void GenerationPool::drain() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [this] { return in_flight_.load() == 0; });
}

void GenerationPool::worker() {
  while (true) {
    Job job;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
    }
    job();
    {
      std::lock_guard lock(mutex_);
      --in_flight_;
    }
    idle_cv_.notify_all();
  }
}

}  // namespace botverse
