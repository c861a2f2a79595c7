#include <httplib.h>

#include <cstdlib>
#include <regex>
#include <thread>

#include "botverse/brain.hpp"
#include "botverse/errors.hpp"
#include "botverse/text.hpp"

namespace botverse {

namespace {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;  // without trailing slash
};

ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw Error(ErrorCode::InvalidSpec, "backend endpoint '" + url + "'");
  std::string path = m[2].matched ? m[2].str() : "";
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {m[1].str(), path};
}

void configure(httplib::Client& cli, std::chrono::milliseconds timeout) {
  const auto secs = timeout.count() / 1000;
  const auto usecs = (timeout.count() % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
}

bool is_timeout(httplib::Error e) {
  return e == httplib::Error::Read || e == httplib::Error::Write ||
         e == httplib::Error::ConnectionTimeout;
}

}  // namespace

BackendDescriptor backend_from_json(const json& j) {
  BackendDescriptor b;
  try {
    b.name = j.at("name").get<std::string>();
    b.endpoint = j.at("endpoint").get<std::string>();
    b.model_id = j.value("model_id", std::string{});
    b.timeout = std::chrono::milliseconds(j.value("timeout_ms", 30'000));
    b.max_retries = j.value("max_retries", 2);
    b.retry_backoff = std::chrono::milliseconds(j.value("retry_backoff_ms", 200));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("backend: ") + e.what());
  }
  if (b.max_retries < 0) throw Error(ErrorCode::InvalidSpec, "backend.max_retries");
  parse_url(b.endpoint);
  return b;
}

json to_json(const BackendDescriptor& b) {
  return json{{"name", b.name},
              {"endpoint", b.endpoint},
              {"model_id", b.model_id},
              {"timeout_ms", b.timeout.count()},
              {"max_retries", b.max_retries},
              {"retry_backoff_ms", b.retry_backoff.count()},
              {"degraded", b.degraded}};
}

BackendDescriptor with_env_overrides(BackendDescriptor b) {
  if (const char* url = std::getenv("BOTVERSE_BACKEND_URL"); url && *url) b.endpoint = url;
  if (const char* model = std::getenv("BOTVERSE_BACKEND_MODEL"); model && *model) b.model_id = model;
  return b;
}

BackendDescriptor register_backend(BackendDescriptor b) {
  const auto url = parse_url(b.endpoint);
  httplib::Client cli(url.scheme_host_port);
  configure(cli, std::min(b.timeout, std::chrono::milliseconds(2000)));
  auto res = cli.Get(url.path + "/models");
  b.degraded = !res;
  return b;
}

GenerationResult generate(const PromptBundle& bundle, const BackendDescriptor& backend) {
  const auto url = parse_url(backend.endpoint);
  const json request{
      {"model", backend.model_id},
      {"messages",
       json::array({{{"role", "system"}, {"content", bundle.system_text}},
                    {{"role", "user"}, {"content", render_user_message(bundle)}}})},
      {"temperature", bundle.decode.temperature},
      {"max_tokens", bundle.decode.max_tokens},
      {"n", 1},
  };
  const std::string body = request.dump();

  httplib::Client cli(url.scheme_host_port);
  configure(cli, backend.timeout);

  const auto started = std::chrono::steady_clock::now();
  bool all_timeouts = true;
  std::string last_error;
  for (int attempt = 0; attempt <= backend.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(backend.retry_backoff * (1 << (attempt - 1)));

    auto res = cli.Post(url.path + "/chat/completions", body, "application/json");
    if (!res) {
      all_timeouts = all_timeouts && is_timeout(res.error());
      last_error = httplib::to_string(res.error());
      continue;
    }
    all_timeouts = false;
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw Error(ErrorCode::BackendRejected, std::to_string(res->status));

    const json reply = json::parse(res->body, nullptr, false);
    std::string text;
    if (!reply.is_discarded() && reply.contains("choices") && !reply["choices"].empty()) {
      const auto& choice = reply["choices"][0];
      if (choice.contains("message") && choice["message"].contains("content") &&
          choice["message"]["content"].is_string())
        text = choice["message"]["content"].get<std::string>();
    }
    if (text.empty()) throw Error(ErrorCode::BackendRejected, "200 without text choice");

    GenerationResult r;
    r.backend = backend.name;
    r.latency = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::steady_clock::now() - started);
    const std::size_t limit = max_chars(bundle.decode);
    if (utf8_length(text) > limit) {
      text = utf8_truncate(text, limit);
      r.truncated = true;
    }
    r.text = std::move(text);
    return r;
  }
  if (all_timeouts) throw Error(ErrorCode::BackendTimeout, backend.name + ": " + last_error);
  throw Error(ErrorCode::AllRetriesExhausted, backend.name + ": " + last_error);
}

}  // namespace botverse
