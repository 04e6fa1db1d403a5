#include "crisisbot/dialogue.hpp"

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <set>

namespace crisisbot::dialogue {

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

std::optional<ParsedUrl> parse_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) return std::nullopt;
  if (url.substr(0, scheme_end) != "http") return std::nullopt;
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (path_start == std::string_view::npos) {
    out.origin = std::string(url);
    out.path = "/";
  } else {
    out.origin = std::string(url.substr(0, path_start));
    out.path = std::string(url.substr(path_start));
  }
  if (out.origin.size() <= scheme_end + 3) return std::nullopt;
  return out;
}

std::string binding_fallback(const ExternalBinding& b, std::string_view group) {
  if (auto it = b.fallback_text.find(std::string(group)); it != b.fallback_text.end()) return it->second;
  if (auto it = b.fallback_text.find("english"); it != b.fallback_text.end()) return it->second;
  if (!b.fallback_text.empty()) return b.fallback_text.begin()->second;
  return {};
}

}  // namespace

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::web: return "web";
    case Channel::messenger_sim: return "messenger_sim";
    case Channel::cli: return "cli";
  }
  return "web";
}

std::optional<Channel> parse_channel(std::string_view s) {
  if (s == "web") return Channel::web;
  if (s == "messenger_sim") return Channel::messenger_sim;
  if (s == "cli") return Channel::cli;
  return std::nullopt;
}

std::string_view to_string(ReplyKind k) {
  switch (k) {
    case ReplyKind::answer: return "answer";
    case ReplyKind::external: return "external";
    case ReplyKind::fallback: return "fallback";
  }
  return "fallback";
}

Session Session::start(std::string id, Channel channel, Timestamp at) {
  return Session{std::move(id), channel, at, at, 0};
}

void ConnectorRegistry::add(ExternalBinding binding) {
  if (binding.timeout.count() <= 0) throw Error("external service \"" + binding.key + "\": timeout must be positive");
  const std::string key = binding.key;
  if (!bindings_.emplace(key, std::move(binding)).second) throw Error("duplicate external service key: " + key);
}

const ExternalBinding* ConnectorRegistry::find(std::string_view key) const {
  auto it = bindings_.find(key);
  return it == bindings_.end() ? nullptr : &it->second;
}

std::vector<std::string> ConnectorRegistry::keys() const {
  std::vector<std::string> out;
  for (const auto& [key, b] : bindings_) out.push_back(key);
  return out;
}

ConnectorRegistry ConnectorRegistry::from_catalog(const corpus::IntentCatalog& catalog) {
  ConnectorRegistry reg;
  for (const auto& s : catalog.services()) reg.add({s.key, s.endpoint, s.timeout, s.fallback_text});
  return reg;
}

std::string invoke_external(const ExternalBinding& binding, std::string_view intent_id,
                            std::string_view language_group) {
  const auto url = parse_url(binding.endpoint);
  if (!url) {
    spdlog::warn("external service {}: unsupported endpoint {}", binding.key, binding.endpoint);
    return binding_fallback(binding, language_group);
  }
  try {
    httplib::Client client(url->origin);
    client.set_connection_timeout(binding.timeout);
    client.set_read_timeout(binding.timeout);
    client.set_write_timeout(binding.timeout);
    const httplib::Params params{{"intent", std::string(intent_id)}, {"lang", std::string(language_group)}};
    auto res = client.Get(url->path, params, httplib::Headers{});
    if (!res) {
      spdlog::warn("external service {}: request failed ({})", binding.key, httplib::to_string(res.error()));
      return binding_fallback(binding, language_group);
    }
    if (res->status < 200 || res->status >= 300) {
      spdlog::warn("external service {}: HTTP {}", binding.key, res->status);
      return binding_fallback(binding, language_group);
    }
    const auto body = nlohmann::json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("text") || !body["text"].is_string()) {
      spdlog::warn("external service {}: malformed body", binding.key);
      return binding_fallback(binding, language_group);
    }
    return body["text"].get<std::string>();
  } catch (const std::exception& e) {
    spdlog::warn("external service {}: {}", binding.key, e.what());
    return binding_fallback(binding, language_group);
  }
}

std::pair<std::string, std::string> select_answer(const corpus::IntentCatalog& catalog, std::string_view intent_id) {
  const corpus::IntentEntry* entry = catalog.find(intent_id);
  if (!entry) throw Error("unknown intent: " + std::string(intent_id));
  return {entry->answer, entry->language_group};
}

const std::string& fallback_reply(const corpus::IntentCatalog& catalog, std::string_view language_group) {
  const std::string* msg = catalog.fallback_message(language_group);
  if (!msg) throw Error("no fallback message for language group: " + std::string(language_group));
  return *msg;
}

Engine::Engine(std::shared_ptr<const embed::EmbeddingModel> model, double threshold,
               std::shared_ptr<const corpus::IntentCatalog> catalog, ConnectorRegistry registry,
               std::shared_ptr<datastore::UnansweredLog> unanswered)
    : model_(std::move(model)),
      threshold_(threshold),
      catalog_(std::move(catalog)),
      registry_(std::move(registry)),
      unanswered_(std::move(unanswered)) {
  if (!model_ || !catalog_) throw Error("engine needs a model and a catalog");
  std::set<std::string> catalog_ids;
  for (const auto& e : catalog_->entries()) {
    catalog_ids.insert(e.intent_id);
    if (e.external_service && !registry_.find(*e.external_service)) {
      throw Error("intent \"" + e.intent_id + "\" is bound to unregistered service \"" + *e.external_service + "\"");
    }
  }
  const std::set<std::string> model_ids(model_->vocab.tags().begin(), model_->vocab.tags().end());
  if (model_ids != catalog_ids) throw Error("model intents do not match catalog intents");
}

std::string Engine::default_group() const {
  if (catalog_->fallback_message("english")) return "english";
  for (const auto& g : catalog_->language_groups()) {
    if (catalog_->fallback_message(g.id)) return g.id;
  }
  return catalog_->fallback_messages().begin()->first;
}

Reply Engine::fallback(const std::string& group, double confidence) const {
  Reply r;
  r.kind = ReplyKind::fallback;
  r.language_group = group;
  r.text = fallback_reply(*catalog_, group);
  r.confidence = confidence;
  return r;
}

Reply Engine::handle_message(Session& session, std::string_view text, Timestamp now) const noexcept {
  ++session.turn_count;
  session.last_active = std::max(session.last_active, now);

  Reply reply;
  try {
    const classify::Prediction p = classify::predict(*model_, text);
    if (p.ranked.empty()) {
      reply = fallback(default_group(), 0.0);
    } else {
      const classify::ScoredIntent& top = p.top();
      const corpus::IntentEntry* entry = catalog_->find(top.intent_id);
      if (top.confidence >= threshold_) {
        reply.intent_id = top.intent_id;
        reply.confidence = top.confidence;
        reply.language_group = entry->language_group;
        if (entry->external_service) {
          reply.kind = ReplyKind::external;
          reply.text = invoke_external(*registry_.find(*entry->external_service), top.intent_id,
                                       entry->language_group);
        } else {
          reply.kind = ReplyKind::answer;
          reply.text = entry->answer;
        }
      } else {
        reply = fallback(entry ? entry->language_group : default_group(), top.confidence);
      }
    }
  } catch (const std::exception& e) {
    spdlog::error("handle_message failed for session {}: {}", session.session_id, e.what());
    try {
      reply = fallback(default_group(), 0.0);
    } catch (...) {
      reply = Reply{};
    }
  }

  if (reply.kind == ReplyKind::fallback && unanswered_) {
    try {
      unanswered_->append(text, now, to_string(session.channel));
    } catch (const std::exception& e) {
      spdlog::error("could not log unanswered question: {}", e.what());
    }
  }
  return reply;
}

}  // namespace crisisbot::dialogue
