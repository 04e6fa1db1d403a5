#include "crisisbot/datastore.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <fstream>
#include <map>

namespace crisisbot::datastore {

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS conversations (
  session_id   TEXT PRIMARY KEY,
  channel      TEXT NOT NULL,
  started_ms   INTEGER NOT NULL,
  last_turn_ms INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS turns (
  id          INTEGER PRIMARY KEY AUTOINCREMENT,
  session_id  TEXT NOT NULL REFERENCES conversations(session_id),
  ts_ms       INTEGER NOT NULL,
  ts          TEXT NOT NULL,
  user_text   TEXT NOT NULL,
  reply_kind  TEXT NOT NULL,
  intent_id   TEXT,
  confidence  REAL NOT NULL,
  reply_text  TEXT NOT NULL DEFAULT ''
);
CREATE INDEX IF NOT EXISTS turns_by_session ON turns(session_id, ts_ms, id);
CREATE INDEX IF NOT EXISTS turns_by_time ON turns(ts_ms);
PRAGMA user_version = 1;
)sql";

std::int64_t to_ms(Timestamp t) { return t.time_since_epoch().count(); }
Timestamp from_ms(std::int64_t ms) { return Timestamp{std::chrono::milliseconds{ms}}; }

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) {
      throw StorageError(std::string("sqlite prepare failed: ") + sqlite3_errmsg(db));
    }
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Statement& bind(int i, double v) {
    check(sqlite3_bind_double(stmt_, i, v));
    return *this;
  }
  Statement& bind(int i, const std::string& v) {
    check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Statement& bind_null(int i) {
    check(sqlite3_bind_null(stmt_, i));
    return *this;
  }

  /// True while a row is available.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw StorageError(std::string("sqlite step failed: ") + sqlite3_errmsg(db_));
  }
  void reset() {
    sqlite3_reset(stmt_);
    sqlite3_clear_bindings(stmt_);
  }

  std::int64_t int64(int col) const { return sqlite3_column_int64(stmt_, col); }
  double real(int col) const { return sqlite3_column_double(stmt_, col); }
  bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }
  std::string text(int col) const {
    const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_, col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col))) : std::string();
  }

 private:
  void check(int rc) const {
    if (rc != SQLITE_OK) throw StorageError(std::string("sqlite bind failed: ") + sqlite3_errmsg(db_));
  }
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw StorageError("sqlite: " + msg);
  }
}

class Transaction {
 public:
  explicit Transaction(sqlite3* db) : db_(db) { exec(db_, "BEGIN IMMEDIATE"); }
  ~Transaction() {
    if (!committed_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    exec(db_, "COMMIT");
    committed_ = true;
  }

 private:
  sqlite3* db_;
  bool committed_ = false;
};

Turn read_turn(const Statement& s, int first_col) {
  Turn t;
  t.timestamp = from_ms(s.int64(first_col));
  t.user_text = s.text(first_col + 1);
  t.reply_kind = s.text(first_col + 2);
  if (!s.is_null(first_col + 3)) t.intent_id = s.text(first_col + 3);
  t.confidence = s.real(first_col + 4);
  t.reply_text = s.text(first_col + 5);
  return t;
}

std::size_t count_distinct_sessions(sqlite3* db, std::int64_t from, std::int64_t to) {
  Statement s(db, "SELECT COUNT(DISTINCT session_id) FROM turns WHERE ts_ms >= ?1 AND ts_ms < ?2");
  s.bind(1, from).bind(2, to);
  s.step();
  return static_cast<std::size_t>(s.int64(0));
}

}  // namespace

ConversationStore::ConversationStore(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  const int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
  if (sqlite3_open_v2(file.string().c_str(), &db_, flags, nullptr) != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    db_ = nullptr;
    throw StorageError("cannot open conversation store " + file.string() + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  try {
    exec(db_, "PRAGMA journal_mode = WAL");
    exec(db_, "PRAGMA synchronous = NORMAL");
    exec(db_, "PRAGMA foreign_keys = ON");
    exec(db_, kSchema);
  } catch (...) {
    sqlite3_close(db_);
    db_ = nullptr;
    throw;
  }
}

ConversationStore::~ConversationStore() { sqlite3_close(db_); }

void ConversationStore::insert_locked(const PendingTurn& p) {
  const std::int64_t ts = to_ms(p.turn.timestamp);
  {
    Statement last(db_, "SELECT last_turn_ms FROM conversations WHERE session_id = ?1");
    last.bind(1, p.session_id);
    if (last.step()) {
      if (ts < last.int64(0)) {
        throw StorageError("turn for session " + p.session_id + " predates its last recorded turn");
      }
      Statement upd(db_, "UPDATE conversations SET last_turn_ms = ?2 WHERE session_id = ?1");
      upd.bind(1, p.session_id).bind(2, ts);
      upd.step();
    } else {
      Statement ins(db_,
                    "INSERT INTO conversations(session_id, channel, started_ms, last_turn_ms) VALUES (?1, ?2, ?3, ?3)");
      ins.bind(1, p.session_id).bind(2, p.channel).bind(3, ts);
      ins.step();
    }
  }
  Statement ins(db_,
                "INSERT INTO turns(session_id, ts_ms, ts, user_text, reply_kind, intent_id, confidence, reply_text) "
                "VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)");
  ins.bind(1, p.session_id).bind(2, ts).bind(3, format_rfc3339(p.turn.timestamp)).bind(4, p.turn.user_text);
  ins.bind(5, p.turn.reply_kind);
  if (p.turn.intent_id) {
    ins.bind(6, *p.turn.intent_id);
  } else {
    ins.bind_null(6);
  }
  ins.bind(7, p.turn.confidence);
  ins.bind(8, p.turn.reply_text);
  ins.step();
}

void ConversationStore::record_turn(const std::string& session_id, const std::string& channel, const Turn& turn) {
  const PendingTurn p{session_id, channel, turn};
  record_turns(std::span<const PendingTurn>(&p, 1));
}

void ConversationStore::record_turns(std::span<const PendingTurn> turns) {
  std::lock_guard lock(mutex_);
  Transaction tx(db_);
  for (const auto& p : turns) insert_locked(p);
  tx.commit();
}

std::optional<ConversationRecord> ConversationStore::conversation(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  Statement head(db_, "SELECT channel FROM conversations WHERE session_id = ?1");
  head.bind(1, session_id);
  if (!head.step()) return std::nullopt;
  ConversationRecord rec;
  rec.session_id = session_id;
  rec.channel = head.text(0);
  Statement s(db_,
              "SELECT ts_ms, user_text, reply_kind, intent_id, confidence, reply_text FROM turns "
              "WHERE session_id = ?1 ORDER BY ts_ms, id");
  s.bind(1, session_id);
  while (s.step()) rec.turns.push_back(read_turn(s, 0));
  return rec;
}

std::vector<ConversationRecord> ConversationStore::conversations(Timestamp from, Timestamp to) const {
  std::lock_guard lock(mutex_);
  Statement s(db_,
              "SELECT t.session_id, c.channel, t.ts_ms, t.user_text, t.reply_kind, t.intent_id, t.confidence, t.reply_text "
              "FROM turns t JOIN conversations c ON c.session_id = t.session_id "
              "WHERE t.ts_ms >= ?1 AND t.ts_ms < ?2 ORDER BY c.started_ms, t.session_id, t.ts_ms, t.id");
  s.bind(1, to_ms(from)).bind(2, to_ms(to));
  std::vector<ConversationRecord> out;
  while (s.step()) {
    std::string id = s.text(0);
    if (out.empty() || out.back().session_id != id) out.push_back({id, s.text(1), {}});
    out.back().turns.push_back(read_turn(s, 2));
  }
  return out;
}

std::vector<std::string> ConversationStore::session_ids() const {
  std::lock_guard lock(mutex_);
  Statement s(db_, "SELECT session_id FROM conversations ORDER BY started_ms, session_id");
  std::vector<std::string> out;
  while (s.step()) out.push_back(s.text(0));
  return out;
}

UsageStats ConversationStore::usage_stats(const UsageQuery& q) const {
  if (!(q.from < q.to)) throw Error("usage range must satisfy from < to");
  std::lock_guard lock(mutex_);

  UsageStats stats;
  Statement s(db_,
              "SELECT session_id, COUNT(*) FROM turns WHERE ts_ms >= ?1 AND ts_ms < ?2 GROUP BY session_id");
  s.bind(1, to_ms(q.from)).bind(2, to_ms(q.to));
  bool first = true;
  while (s.step()) {
    const auto n = static_cast<std::size_t>(s.int64(1));
    ++stats.unique_users;
    stats.total_questions += n;
    stats.min_q_per_conv = first ? n : std::min(stats.min_q_per_conv, n);
    stats.max_q_per_conv = std::max(stats.max_q_per_conv, n);
    first = false;
  }
  if (stats.unique_users > 0) {
    stats.avg_q_per_conv =
        static_cast<double>(stats.total_questions) / static_cast<double>(stats.unique_users);
  }

  using namespace std::chrono;
  const std::int64_t day_start = to_ms(Timestamp{q.day});
  const std::int64_t day_end = to_ms(Timestamp{q.day + days{1}});
  const std::int64_t month_start = to_ms(Timestamp{q.day - days{kMauWindowDays - 1}});
  stats.daily_active = count_distinct_sessions(db_, day_start, day_end);
  stats.monthly_active = count_distinct_sessions(db_, month_start, day_end);
  if (stats.monthly_active > 0) {
    stats.stickiness = static_cast<double>(stats.daily_active) / static_cast<double>(stats.monthly_active);
  }
  return stats;
}

std::string escape_field(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_field(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '\\' || i + 1 == text.size()) {
      out.push_back(text[i]);
      continue;
    }
    switch (text[++i]) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case '\\': out.push_back('\\'); break;
      default:
        out.push_back('\\');
        out.push_back(text[i]);
    }
  }
  return out;
}

UnansweredLog::UnansweredLog(std::filesystem::path file) : path_(std::move(file)) {}

void UnansweredLog::append(std::string_view text, Timestamp timestamp, std::string_view channel) {
  std::string line = format_rfc3339(timestamp);
  line += '\t';
  line += escape_field(channel);
  line += '\t';
  line += escape_field(text);
  line += '\n';

  std::lock_guard lock(mutex_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw StorageError("cannot open unanswered log: " + path_.string());
  out << line;
  out.flush();
  if (!out) throw StorageError("failed appending to unanswered log: " + path_.string());
}

std::vector<UnansweredEntry> UnansweredLog::read_all() const {
  std::lock_guard lock(mutex_);
  std::vector<UnansweredEntry> out;
  std::ifstream in(path_, std::ios::binary);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? std::string::npos : line.find('\t', a + 1);
    if (b == std::string::npos) throw StorageError("malformed unanswered log line: " + line);
    out.push_back({line.substr(0, a), unescape_field(line.substr(a + 1, b - a - 1)), unescape_field(line.substr(b + 1))});
  }
  return out;
}

std::size_t UnansweredLog::line_count() const {
  std::lock_guard lock(mutex_);
  std::ifstream in(path_, std::ios::binary);
  if (!in) return 0;
  return static_cast<std::size_t>(std::count(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>(), '\n'));
}

DataPaths data_paths(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  return {dir / "conversations.sqlite3", dir / "unanswered.tsv"};
}

}  // namespace crisisbot::datastore
