#include <sstream>

#include "botverse/brain.hpp"
#include "botverse/errors.hpp"

namespace botverse {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::compose_post: return "compose_post";
    case TaskKind::compose_reply: return "compose_reply";
    case TaskKind::compose_repost_comment: return "compose_repost_comment";
    case TaskKind::compose_image_prompt: return "compose_image_prompt";
  }
  return "compose_post";
}

TaskKind task_kind_from_string(std::string_view s) {
  for (auto k : {TaskKind::compose_post, TaskKind::compose_reply, TaskKind::compose_repost_comment,
                 TaskKind::compose_image_prompt})
    if (to_string(k) == s) return k;
  throw Error(ErrorCode::MalformedJson, "task kind '" + std::string(s) + "'");
}

DecodeTable default_decode_table() {
  return {{TaskKind::compose_post, {0.9, 120}},
          {TaskKind::compose_reply, {0.7, 200}},
          {TaskKind::compose_repost_comment, {0.7, 60}},
          {TaskKind::compose_image_prompt, {0.8, 60}}};
}

namespace {

std::string humanize(std::string key) {
  for (auto& c : key)
    if (c == '_') c = ' ';
  return key;
}

// Fixed elaborations for well-known trait values, appended to the trait's
// own sentence after a colon.
const std::map<std::pair<std::string, std::string>, std::string> kTraitPhrases = {
    {{"skepticism", "high"},
     "you stay cautious online, question exaggerated posts, and use critical thinking to avoid "
     "disinformation"},
    {{"disinformation_propensity", "high"},
     "you readily spread unverified claims that serve your agenda"},
};

std::string join_clauses(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += parts.size() > 2 ? ", " : " ";
    if (i > 0 && i + 1 == parts.size()) out += "and ";
    out += parts[i];
  }
  return out;
}

}  // namespace

std::string render_system_text(const Persona& p) {
  std::vector<std::string> lines;

  std::string identity = "You are " + p.handle;
  std::string desc;
  if (p.age) desc = std::to_string(*p.age) + "-year-old";
  if (p.gender) desc += (desc.empty() ? "" : " ") + *p.gender;
  if (!desc.empty()) identity += ", a " + desc;
  if (p.location) identity += (desc.empty() ? ", living in " : " living in ") + *p.location;
  lines.push_back(identity + ".");

  std::vector<std::string> psycho;
  if (p.political_orientation) psycho.push_back("hold " + *p.political_orientation + " political views");
  if (p.religious_orientation) psycho.push_back("are " + *p.religious_orientation);
  if (p.education) psycho.push_back("have a " + *p.education);
  if (!psycho.empty()) lines.push_back("You " + join_clauses(psycho) + ".");

  for (const auto& [key, value] : p.behavioral_traits) {
    std::string sentence = "Your " + humanize(key) + " is " + value;
    if (auto it = kTraitPhrases.find({key, value}); it != kTraitPhrases.end())
      sentence += ": " + it->second;
    lines.push_back(sentence + ".");
  }

  for (const auto& [key, value] : p.extra.items()) {
    const std::string rendered = value.is_string() ? value.get<std::string>() : value.dump();
    lines.push_back("Your " + humanize(key) + " is " + rendered + ".");
  }

  lines.push_back("Your simulation archetype is " + std::string(to_string(p.archetype)) + ".");

  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += '\n';
    out += l;
  }
  return out;
}

PromptBundle build_prompt(const Persona& persona, std::span<const ContextItem> memory_top_k,
                          std::optional<Stimulus> stimulus, Task task,
                          std::optional<Campaign> campaign, const DecodeTable& decode) {
  PromptBundle b;
  b.persona = persona;
  b.system_text = render_system_text(persona);
  b.context_items.assign(memory_top_k.begin(), memory_top_k.end());
  b.stimulus = std::move(stimulus);
  b.task = std::move(task);
  auto it = decode.find(b.task.kind);
  b.decode = it != decode.end() ? it->second : DecodeParams{};
  b.campaign = std::move(campaign);
  return b;
}

std::string render_user_message(const PromptBundle& b) {
  std::ostringstream os;
  switch (b.task.kind) {
    case TaskKind::compose_post: os << "Write a new social media post in your own voice.\n"; break;
    case TaskKind::compose_reply: os << "Write a reply to the post below.\n"; break;
    case TaskKind::compose_repost_comment:
      os << "Write a short comment to accompany your repost of the post below.\n";
      break;
    case TaskKind::compose_image_prompt:
      os << "Write a one-line prompt for an image generator depicting: "
         << b.task.topic.value_or("a scene from your day") << ".\n";
      break;
  }
  if (b.campaign)
    os << "Your current campaign (narrative " << b.campaign->narrative_id
       << "): " << b.campaign->text << "\n";
  if (b.stimulus) {
    if (const auto* ext = std::get_if<ExternalPost>(&*b.stimulus))
      os << "Trending post from outside the platform: " << ext->text << "\n";
    else
      os << "Post by @" << std::get<Post>(*b.stimulus).author_name() << ": "
         << std::get<Post>(*b.stimulus).text << "\n";
  }
  if (!b.context_items.empty()) {
    os << "Posts you remember:\n";
    int i = 1;
    for (const auto& c : b.context_items)
      os << i++ << ". (likes " << c.likes << ", reposts " << c.reposts << ") " << c.text << "\n";
  }
  os << "Answer with the text only, at most " << b.decode.max_tokens << " tokens.";
  return os.str();
}

json to_json(const PromptBundle& b) {
  json ctx = json::array();
  for (const auto& c : b.context_items)
    ctx.push_back({{"post_id", c.post_id}, {"text", c.text}, {"likes", c.likes}, {"reposts", c.reposts}});
  json j{{"system_text", b.system_text},
         {"context_items", ctx},
         {"task", {{"kind", std::string(to_string(b.task.kind))}}},
         {"decode", {{"temperature", b.decode.temperature}, {"max_tokens", b.decode.max_tokens}}}};
  if (b.task.target) j["task"]["target"] = *b.task.target;
  if (b.task.topic) j["task"]["topic"] = *b.task.topic;
  if (b.stimulus) {
    if (const auto* ext = std::get_if<ExternalPost>(&*b.stimulus))
      j["stimulus"] = {{"external", to_json(*ext)}};
    else
      j["stimulus"] = {{"post", to_json(std::get<Post>(*b.stimulus))}};
  }
  if (b.campaign) j["campaign"] = {{"narrative_id", b.campaign->narrative_id}, {"text", b.campaign->text}};
  return j;
}

}  // namespace botverse
