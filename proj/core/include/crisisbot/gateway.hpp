#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crisisbot/common.hpp"
#include "crisisbot/datastore.hpp"
#include "crisisbot/dialogue.hpp"

namespace crisisbot::gateway {

inline constexpr std::size_t kMaxTextScalars = 2000;

/// Request body of `POST /v1/messages`.
struct WireMessage {
  std::string session_id;
  std::string text;
  std::string channel = "web";
  std::optional<std::string> timestamp;  // RFC 3339

  bool operator==(const WireMessage&) const = default;
};

/// Response body of `POST /v1/messages`.
struct WireReply {
  std::string session_id;
  std::string kind;
  std::string text;
  std::optional<std::string> intent_id;
  double confidence = 0.0;
  std::string language_group;
  std::string timestamp;

  bool operator==(const WireReply&) const = default;
};

/// Carries the HTTP status the request should be answered with.
class WireError : public Error {
 public:
  WireError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Throws WireError: 400 for malformed or invalid fields, 413 for text longer
/// than kMaxTextScalars.
WireMessage parse_wire_message(std::string_view body);
std::string serialize(const WireMessage& m);
std::string serialize(const WireReply& r);
WireReply parse_wire_reply(std::string_view body);

bool is_valid_session_id(std::string_view id);

/// Strips markup tags, decodes HTML entities and drops control characters
/// (tab and newlines become spaces). Idempotent.
std::string sanitize(std::string_view text);

struct HttpResult {
  int status = 200;
  std::string body;
};

/// Outbound side of a messaging platform connector.
class PlatformAdapter {
 public:
  virtual ~PlatformAdapter() = default;
  /// URL segment of `POST /v1/webhook/{platform}`; must name a channel.
  virtual std::string platform() const = 0;
  virtual void deliver(const std::string& recipient_id, const WireReply& reply) = 0;
};

struct OutboundMessage {
  std::string recipient_id;
  WireReply reply;
};

/// Stand-in for a Messenger-style platform. Inbound events use
///   {"type": "message", "sender_id": "...", "text": "...", "token": "..."}
/// and outbound replies are kept in an outbox, and optionally POSTed as
///   {"recipient_id": "...", "text": "...", "kind": "..."}
/// to a send-API URL.
class MessengerSimulator : public PlatformAdapter {
 public:
  explicit MessengerSimulator(std::optional<std::string> send_api_url = std::nullopt);

  std::string platform() const override { return "messenger_sim"; }
  void deliver(const std::string& recipient_id, const WireReply& reply) override;

  std::vector<OutboundMessage> outbox() const;

  static std::string make_event(std::string_view sender_id, std::string_view text, std::string_view token,
                                std::string_view type = "message");

 private:
  std::optional<std::string> send_api_url_;
  mutable std::mutex mutex_;
  std::vector<OutboundMessage> outbox_;
};

struct GatewayConfig {
  std::string webhook_secret;
  std::optional<std::filesystem::path> static_dir;
};

struct Address {
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// Parses `host:port` (or `:port`, or a bare port).
Address parse_address(std::string_view text);

/// Presentation + NLP layer server. Handlers are callable directly (for
/// tests) or through the embedded HTTP server. Requests for the same session
/// are processed one at a time, in arrival order.
class Gateway {
 public:
  Gateway(GatewayConfig config, std::shared_ptr<datastore::ConversationStore> store);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void load_engine(std::shared_ptr<const dialogue::Engine> engine, std::string model_version);
  void add_adapter(std::shared_ptr<PlatformAdapter> adapter);

  HttpResult post_message(std::string_view body);
  HttpResult health() const;
  HttpResult webhook(std::string_view platform, std::string_view body);

  /// Binds the HTTP server; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires a prior bind().
  void listen();
  /// Blocks until a listen() running on another thread accepts connections.
  void wait_until_listening();
  /// No effect unless listen() is running.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace crisisbot::gateway
