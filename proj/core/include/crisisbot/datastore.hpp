#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crisisbot/common.hpp"

struct sqlite3;

namespace crisisbot::datastore {

class StorageError : public Error {
 public:
  using Error::Error;
};

struct Turn {
  Timestamp timestamp;
  std::string user_text;
  std::string reply_kind;  // "answer" | "external" | "fallback"
  std::optional<std::string> intent_id;
  double confidence = 0.0;
  std::string reply_text;

  bool operator==(const Turn&) const = default;
};

struct ConversationRecord {
  std::string session_id;
  std::string channel;
  std::vector<Turn> turns;  // timestamp non-decreasing

  bool operator==(const ConversationRecord&) const = default;
};

struct PendingTurn {
  std::string session_id;
  std::string channel;
  Turn turn;
};

/// Half-open reporting range plus the calendar day that defines daily
/// actives. Monthly actives are taken over the 30 days ending with `day`.
struct UsageQuery {
  Timestamp from;
  Timestamp to;
  std::chrono::sys_days day;
};

struct UsageStats {
  std::size_t unique_users = 0;  // distinct session ids
  std::size_t total_questions = 0;
  std::size_t min_q_per_conv = 0;
  std::size_t max_q_per_conv = 0;
  double avg_q_per_conv = 0.0;
  std::size_t daily_active = 0;
  std::size_t monthly_active = 0;
  double stickiness = 0.0;  // daily_active / monthly_active, 0 when no monthly actives
};

inline constexpr int kMauWindowDays = 30;

/// Conversation log in a single SQLite file (WAL journal). Writes go through
/// one connection under a mutex; the class is safe to share between threads.
class ConversationStore {
 public:
  explicit ConversationStore(const std::filesystem::path& file);
  ~ConversationStore();
  ConversationStore(const ConversationStore&) = delete;
  ConversationStore& operator=(const ConversationStore&) = delete;

  /// Throws StorageError on I/O failure or when the turn predates the
  /// session's last recorded turn.
  void record_turn(const std::string& session_id, const std::string& channel, const Turn& turn);

  /// Appends many turns in one transaction.
  void record_turns(std::span<const PendingTurn> turns);

  std::optional<ConversationRecord> conversation(const std::string& session_id) const;

  /// Conversations with at least one turn in [from, to); only the turns in
  /// range are returned.
  std::vector<ConversationRecord> conversations(Timestamp from, Timestamp to) const;

  std::vector<std::string> session_ids() const;

  UsageStats usage_stats(const UsageQuery& query) const;

 private:
  void insert_locked(const PendingTurn& pending);

  mutable std::mutex mutex_;
  sqlite3* db_ = nullptr;
};

/// `\` -> `\\`, tab -> `\t`, newline -> `\n`, carriage return -> `\r`.
std::string escape_field(std::string_view text);
std::string unescape_field(std::string_view text);

struct UnansweredEntry {
  std::string timestamp;
  std::string channel;
  std::string text;

  bool operator==(const UnansweredEntry&) const = default;
};

/// Append-only `timestamp<TAB>channel<TAB>text` file of questions the bot
/// could not answer.
class UnansweredLog {
 public:
  explicit UnansweredLog(std::filesystem::path file);

  void append(std::string_view text, Timestamp timestamp, std::string_view channel);
  std::vector<UnansweredEntry> read_all() const;
  std::size_t line_count() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

struct DataPaths {
  std::filesystem::path conversations;
  std::filesystem::path unanswered;
};

/// File layout inside a data directory; creates the directory if needed.
DataPaths data_paths(const std::filesystem::path& dir);

}  // namespace crisisbot::datastore
