#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crisisbot/classifier.hpp"
#include "crisisbot/common.hpp"
#include "crisisbot/corpus.hpp"
#include "crisisbot/datastore.hpp"
#include "crisisbot/embednet.hpp"

namespace crisisbot::dialogue {

enum class Channel { web, messenger_sim, cli };

std::string_view to_string(Channel c);
std::optional<Channel> parse_channel(std::string_view s);

/// Per-conversation bookkeeping. Only used for analytics; the bot itself is
/// single-turn.
struct Session {
  std::string session_id;
  Channel channel = Channel::web;
  Timestamp started_at;
  Timestamp last_active;
  std::uint64_t turn_count = 0;

  static Session start(std::string id, Channel channel, Timestamp at = now_utc());
};

enum class ReplyKind { answer, external, fallback };

std::string_view to_string(ReplyKind k);

struct Reply {
  ReplyKind kind = ReplyKind::fallback;
  std::string text;
  std::optional<std::string> intent_id;
  double confidence = 0.0;
  std::string language_group;
};

struct ExternalBinding {
  std::string key;
  std::string endpoint;  // http://host[:port][/path]
  std::chrono::milliseconds timeout{3000};
  std::map<std::string, std::string> fallback_text;  // language group -> text
};

class ConnectorRegistry {
 public:
  /// Throws Error on a duplicate key or non-positive timeout.
  void add(ExternalBinding binding);
  const ExternalBinding* find(std::string_view key) const;
  std::vector<std::string> keys() const;

  static ConnectorRegistry from_catalog(const corpus::IntentCatalog& catalog);

 private:
  std::map<std::string, ExternalBinding, std::less<>> bindings_;
};

/// One GET to binding.endpoint with query `intent` and `lang`; returns the
/// `text` field of the JSON body. Any failure (connect, timeout, status,
/// body) yields the binding's fallback text for the language group.
std::string invoke_external(const ExternalBinding& binding, std::string_view intent_id,
                            std::string_view language_group);

/// The intent's answer and its language group. Throws Error for an unknown id.
std::pair<std::string, std::string> select_answer(const corpus::IntentCatalog& catalog,
                                                  std::string_view intent_id);

/// Throws Error when the catalog has no message for the group.
const std::string& fallback_reply(const corpus::IntentCatalog& catalog, std::string_view language_group);

/// Loaded NLU layer. Immutable after construction and safe to share between
/// threads; sessions are owned by the caller.
class Engine {
 public:
  /// Throws Error if model tags and catalog intents disagree or a bound
  /// service is missing from the registry. `unanswered` may be null.
  Engine(std::shared_ptr<const embed::EmbeddingModel> model, double threshold,
         std::shared_ptr<const corpus::IntentCatalog> catalog, ConnectorRegistry registry,
         std::shared_ptr<datastore::UnansweredLog> unanswered);

  /// Never throws. Below-threshold messages get the fallback of the best-guess
  /// language group and are appended to the unanswered log.
  Reply handle_message(Session& session, std::string_view text, Timestamp now = now_utc()) const noexcept;

  double threshold() const { return threshold_; }
  const embed::EmbeddingModel& model() const { return *model_; }
  const corpus::IntentCatalog& catalog() const { return *catalog_; }
  const ConnectorRegistry& registry() const { return registry_; }

 private:
  std::string default_group() const;
  Reply fallback(const std::string& group, double confidence) const;

  std::shared_ptr<const embed::EmbeddingModel> model_;
  double threshold_;
  std::shared_ptr<const corpus::IntentCatalog> catalog_;
  ConnectorRegistry registry_;
  std::shared_ptr<datastore::UnansweredLog> unanswered_;
};

}  // namespace crisisbot::dialogue
