#include "crisisbot/gateway.hpp"

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <map>

#include "crisisbot/featurizer.hpp"

namespace crisisbot::gateway {

using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json; charset=utf-8";

HttpResult error_result(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

bool is_control(char32_t c) { return c < 0x20 || (c >= 0x7F && c <= 0x9F); }

void append_scalar(std::string& out, char32_t c) { out += features::to_utf8(std::u32string_view(&c, 1)); }

// Control characters out; tab and line breaks become spaces.
std::string strip_controls(std::string_view text) {
  std::u32string kept;
  for (char32_t c : features::to_scalars(text)) {
    if (c == '\t' || c == '\n' || c == '\r') {
      kept.push_back(' ');
    } else if (!is_control(c)) {
      kept.push_back(c);
    }
  }
  return features::to_utf8(kept);
}

std::optional<char32_t> named_entity(std::string_view name) {
  static const std::map<std::string_view, char32_t> kEntities = {
      {"amp", '&'}, {"lt", '<'}, {"gt", '>'}, {"quot", '"'}, {"apos", '\''}, {"nbsp", ' '}};
  auto it = kEntities.find(name);
  if (it == kEntities.end()) return std::nullopt;
  return it->second;
}

std::string decode_entities(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out.push_back(s[i]);
      continue;
    }
    const auto semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) {
      out.push_back('&');
      continue;
    }
    const std::string_view name = s.substr(i + 1, semi - i - 1);
    std::optional<char32_t> decoded;
    if (name.size() > 1 && name[0] == '#') {
      const bool hex = name[1] == 'x' || name[1] == 'X';
      const std::string digits(name.substr(hex ? 2 : 1));
      if (!digits.empty() && digits.find_first_not_of(hex ? "0123456789abcdefABCDEF" : "0123456789") ==
                                 std::string::npos) {
        const unsigned long v = std::stoul(digits, nullptr, hex ? 16 : 10);
        if (v == 0 || v > 0x10FFFF || (v >= 0xD800 && v <= 0xDFFF)) {
          decoded = 0xFFFD;
        } else {
          decoded = static_cast<char32_t>(v);
        }
      }
    } else {
      decoded = named_entity(name);
    }
    if (!decoded) {
      out.push_back('&');
      continue;
    }
    if (*decoded == '\t' || *decoded == '\n' || *decoded == '\r') {
      out.push_back(' ');
    } else if (!is_control(*decoded)) {
      append_scalar(out, *decoded);
    }
    i = semi;
  }
  return out;
}

// Removes `<tag ...>`, `</tag>` and `<!...>`; a bare `<` is kept.
std::string strip_tags(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '<' && i + 1 < s.size()) {
      std::size_t j = i + 1;
      if (s[j] == '/') ++j;
      const bool opens_tag = j < s.size() && (std::isalpha(static_cast<unsigned char>(s[j])) || s[j] == '!');
      if (opens_tag) {
        const auto close = s.find_first_of("<>", j);
        if (close != std::string_view::npos && s[close] == '>') {
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(s[i]);
    ++i;
  }
  return out;
}

std::string session_from_sender(std::string_view platform, std::string_view sender) {
  // FNV-1a keeps the id inside the session alphabet whatever the sender looks like.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  mix(platform);
  mix("\x1f");
  mix(sender);
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string("p-") + buf;
}

json reply_to_json(const WireReply& r) {
  json j{{"session_id", r.session_id},
         {"kind", r.kind},
         {"text", r.text},
         {"confidence", r.confidence},
         {"language_group", r.language_group},
         {"timestamp", r.timestamp}};
  j["intent_id"] = r.intent_id ? json(*r.intent_id) : json(nullptr);
  return j;
}

}  // namespace

bool is_valid_session_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
  });
}

std::string sanitize(std::string_view text) {
  std::string current = strip_controls(text);
  for (;;) {
    std::string next = strip_tags(decode_entities(current));
    if (next == current) return next;
    current = std::move(next);
  }
}

WireMessage parse_wire_message(std::string_view body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw WireError(400, "body is not a JSON object");

  WireMessage m;
  if (!j.contains("session_id") || !j["session_id"].is_string()) throw WireError(400, "session_id must be a string");
  if (!j.contains("text") || !j["text"].is_string()) throw WireError(400, "text must be a string");
  m.session_id = j["session_id"].get<std::string>();
  m.text = j["text"].get<std::string>();
  if (j.contains("channel")) {
    if (!j["channel"].is_string()) throw WireError(400, "channel must be a string");
    m.channel = j["channel"].get<std::string>();
  }
  if (j.contains("timestamp") && !j["timestamp"].is_null()) {
    if (!j["timestamp"].is_string()) throw WireError(400, "timestamp must be a string");
    m.timestamp = j["timestamp"].get<std::string>();
  }

  if (features::scalar_length(m.text) > kMaxTextScalars) {
    throw WireError(413, "text exceeds " + std::to_string(kMaxTextScalars) + " characters");
  }
  if (!is_valid_session_id(m.session_id)) throw WireError(400, "session_id must match [A-Za-z0-9-]{1,64}");
  if (!dialogue::parse_channel(m.channel)) throw WireError(400, "unknown channel: " + m.channel);
  if (m.timestamp && !parse_rfc3339(*m.timestamp)) throw WireError(400, "timestamp is not RFC 3339");
  return m;
}

std::string serialize(const WireMessage& m) {
  json j{{"session_id", m.session_id}, {"text", m.text}, {"channel", m.channel}};
  if (m.timestamp) j["timestamp"] = *m.timestamp;
  return j.dump();
}

std::string serialize(const WireReply& r) { return reply_to_json(r).dump(); }

WireReply parse_wire_reply(std::string_view body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw WireError(400, "reply is not a JSON object");
  try {
    WireReply r;
    r.session_id = j.at("session_id").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.text = j.at("text").get<std::string>();
    if (j.contains("intent_id") && !j["intent_id"].is_null()) r.intent_id = j["intent_id"].get<std::string>();
    r.confidence = j.at("confidence").get<double>();
    r.language_group = j.at("language_group").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw WireError(400, std::string("malformed reply: ") + e.what());
  }
}

MessengerSimulator::MessengerSimulator(std::optional<std::string> send_api_url)
    : send_api_url_(std::move(send_api_url)) {}

void MessengerSimulator::deliver(const std::string& recipient_id, const WireReply& reply) {
  {
    std::lock_guard lock(mutex_);
    outbox_.push_back({recipient_id, reply});
  }
  if (!send_api_url_) return;
  const auto path_start = send_api_url_->find('/', send_api_url_->find("://") + 3);
  const std::string origin = send_api_url_->substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : send_api_url_->substr(path_start);
  httplib::Client client(origin);
  const json payload{{"recipient_id", recipient_id}, {"text", reply.text}, {"kind", reply.kind}};
  auto res = client.Post(path, payload.dump(), kJson);
  if (!res || res->status >= 300) spdlog::warn("messenger simulator: send API delivery to {} failed", origin);
}

std::vector<OutboundMessage> MessengerSimulator::outbox() const {
  std::lock_guard lock(mutex_);
  return outbox_;
}

std::string MessengerSimulator::make_event(std::string_view sender_id, std::string_view text, std::string_view token,
                                           std::string_view type) {
  return json{{"type", type}, {"sender_id", sender_id}, {"text", text}, {"token", token}}.dump();
}

Address parse_address(std::string_view text) {
  Address a;
  const auto colon = text.rfind(':');
  std::string_view port = text;
  if (colon != std::string_view::npos) {
    if (colon > 0) a.host = std::string(text.substr(0, colon));
    port = text.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    a.port = std::stoi(std::string(port), &used);
    if (used != port.size() || a.port < 0 || a.port > 65535) throw std::out_of_range("port");
  } catch (const std::exception&) {
    throw Error("invalid listen address: " + std::string(text));
  }
  return a;
}

struct Gateway::Impl {
  GatewayConfig config;
  std::shared_ptr<datastore::ConversationStore> store;
  std::shared_ptr<const dialogue::Engine> engine;  // guarded by engine_mutex
  std::string model_version;
  mutable std::mutex engine_mutex;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  std::mutex sessions_mutex;
  std::map<std::string, dialogue::Session> sessions;
  std::map<std::string, std::shared_ptr<std::mutex>> session_locks;

  std::mutex adapters_mutex;
  std::map<std::string, std::shared_ptr<PlatformAdapter>> adapters;

  httplib::Server server;
  std::atomic<bool> bound{false};

  std::shared_ptr<const dialogue::Engine> current_engine() const {
    std::lock_guard lock(engine_mutex);
    return engine;
  }

  std::shared_ptr<std::mutex> lock_for(const std::string& session_id) {
    std::lock_guard lock(sessions_mutex);
    auto& m = session_locks[session_id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
  }

  // Runs one validated message through the NLU layer and records the turn.
  HttpResult process(const WireMessage& m, WireReply* out) {
    auto eng = current_engine();
    if (!eng) return error_result(503, "engine not loaded");
    const dialogue::Channel channel = *dialogue::parse_channel(m.channel);
    const std::string text = sanitize(m.text);

    auto session_lock = lock_for(m.session_id);
    std::lock_guard serial(*session_lock);

    const Timestamp now = now_utc();
    dialogue::Session session;
    {
      std::lock_guard lock(sessions_mutex);
      auto it = sessions.find(m.session_id);
      session = it != sessions.end() ? it->second : dialogue::Session::start(m.session_id, channel, now);
    }
    const dialogue::Reply reply = eng->handle_message(session, text, now);

    try {
      store->record_turn(m.session_id, m.channel,
                         datastore::Turn{now, text, std::string(dialogue::to_string(reply.kind)), reply.intent_id,
                                         reply.confidence, reply.text});
    } catch (const std::exception& e) {
      spdlog::error("failed to record turn for session {}: {}", m.session_id, e.what());
      return error_result(500, "could not record conversation turn");
    }
    {
      std::lock_guard lock(sessions_mutex);
      sessions[m.session_id] = session;
    }

    WireReply r;
    r.session_id = m.session_id;
    r.kind = std::string(dialogue::to_string(reply.kind));
    r.text = reply.text;
    r.intent_id = reply.intent_id;
    r.confidence = reply.confidence;
    r.language_group = reply.language_group;
    r.timestamp = format_rfc3339(now);
    if (out) *out = r;
    return {200, serialize(r)};
  }
};

Gateway::Gateway(GatewayConfig config, std::shared_ptr<datastore::ConversationStore> store)
    : impl_(std::make_unique<Impl>()) {
  if (!store) throw Error("gateway needs a conversation store");
  impl_->config = std::move(config);
  impl_->store = std::move(store);

  auto& server = impl_->server;
  server.Post("/v1/messages", [this](const httplib::Request& req, httplib::Response& res) {
    const HttpResult r = post_message(req.body);
    res.status = r.status;
    res.set_content(r.body, kJson);
  });
  server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    const HttpResult r = health();
    res.status = r.status;
    res.set_content(r.body, kJson);
  });
  server.Post(R"(/v1/webhook/([A-Za-z0-9_\-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const HttpResult r = webhook(req.matches[1].str(), req.body);
    res.status = r.status;
    res.set_content(r.body, kJson);
  });
  if (impl_->config.static_dir) {
    if (!server.set_mount_point("/", impl_->config.static_dir->string())) {
      spdlog::warn("static directory {} not found; widget assets will not be served",
                   impl_->config.static_dir->string());
    }
  }
}

Gateway::~Gateway() { stop(); }

void Gateway::load_engine(std::shared_ptr<const dialogue::Engine> engine, std::string model_version) {
  std::lock_guard lock(impl_->engine_mutex);
  impl_->engine = std::move(engine);
  impl_->model_version = std::move(model_version);
}

void Gateway::add_adapter(std::shared_ptr<PlatformAdapter> adapter) {
  if (!adapter) throw Error("null platform adapter");
  const std::string name = adapter->platform();
  if (!dialogue::parse_channel(name)) throw Error("platform adapter name must be a channel: " + name);
  std::lock_guard lock(impl_->adapters_mutex);
  impl_->adapters[name] = std::move(adapter);
}

HttpResult Gateway::post_message(std::string_view body) {
  if (!impl_->current_engine()) return error_result(503, "engine not loaded");
  try {
    return impl_->process(parse_wire_message(body), nullptr);
  } catch (const WireError& e) {
    return error_result(e.status(), e.what());
  }
}

HttpResult Gateway::health() const {
  std::lock_guard lock(impl_->engine_mutex);
  const double uptime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - impl_->started).count();
  json j{{"uptime_s", uptime}};
  if (impl_->engine) {
    j["status"] = "ready";
    j["model_version"] = impl_->model_version;
    j["threshold"] = impl_->engine->threshold();
  } else {
    j["status"] = "loading";
    j["model_version"] = nullptr;
    j["threshold"] = nullptr;
  }
  return {200, j.dump()};
}

HttpResult Gateway::webhook(std::string_view platform, std::string_view body) {
  std::shared_ptr<PlatformAdapter> adapter;
  {
    std::lock_guard lock(impl_->adapters_mutex);
    auto it = impl_->adapters.find(std::string(platform));
    if (it == impl_->adapters.end()) return error_result(404, "unknown platform: " + std::string(platform));
    adapter = it->second;
  }

  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return error_result(400, "event is not a JSON object");
  const std::string token = j.contains("token") && j["token"].is_string() ? j["token"].get<std::string>() : "";
  if (impl_->config.webhook_secret.empty() || token != impl_->config.webhook_secret) {
    return error_result(403, "invalid verification token");
  }
  const std::string type = j.contains("type") && j["type"].is_string() ? j["type"].get<std::string>() : "";
  if (type != "message") return {200, json{{"status", "skipped"}, {"type", type}}.dump()};
  if (!j.contains("sender_id") || !j["sender_id"].is_string() || !j.contains("text") || !j["text"].is_string()) {
    return error_result(400, "message event needs string sender_id and text");
  }

  const std::string sender = j["sender_id"].get<std::string>();
  WireMessage m;
  m.session_id = session_from_sender(platform, sender);
  m.text = j["text"].get<std::string>();
  m.channel = std::string(platform);
  if (features::scalar_length(m.text) > kMaxTextScalars) return error_result(413, "text too long");

  WireReply reply;
  const HttpResult r = impl_->process(m, &reply);
  if (r.status != 200) return r;
  try {
    adapter->deliver(sender, reply);
  } catch (const std::exception& e) {
    spdlog::error("delivery through {} failed: {}", platform, e.what());
    return error_result(502, "reply delivery failed");
  }
  return {200, json{{"status", "delivered"}, {"session_id", m.session_id}}.dump()};
}

int Gateway::bind(const std::string& host, int port) {
  int bound_port = port;
  if (port == 0) {
    bound_port = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound_port = -1;
  }
  if (bound_port <= 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->bound = true;
  return bound_port;
}

void Gateway::listen() {
  if (!impl_->bound) throw Error("Gateway::listen called before bind");
  impl_->server.listen_after_bind();
}

void Gateway::wait_until_listening() { impl_->server.wait_until_ready(); }

void Gateway::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace crisisbot::gateway
