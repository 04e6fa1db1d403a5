#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "crisisbot/datastore.hpp"
#include "crisisbot/random.hpp"
#include "test_support.hpp"

namespace crisisbot::datastore {
namespace {

using namespace std::chrono;
using testing::TempDir;

Timestamp at(std::string_view rfc3339) {
  auto t = parse_rfc3339(rfc3339);
  if (!t) throw Error("bad test timestamp");
  return *t;
}

sys_days day_of(std::string_view date) { return *parse_date(date); }

Turn turn(Timestamp t, std::string text = "hello", std::string kind = "answer") {
  return {t, std::move(text), std::move(kind), std::string("greet"), 0.5, "hi"};
}

TEST(ConversationStore, RoundTripsTurns) {
  TempDir dir;
  ConversationStore store(dir / "c.sqlite3");
  const Turn a{at("2020-05-01T10:00:00Z"), "tab\tand\nnewline", "answer", std::string("greet"), 0.123456789, "hi"};
  const Turn b{at("2020-05-01T10:00:05.250Z"), "zzz", "fallback", std::nullopt, -0.25, "sorry"};
  store.record_turn("s1", "web", a);
  store.record_turn("s1", "web", b);
  const auto rec = store.conversation("s1");
  ASSERT_TRUE(rec);
  EXPECT_EQ(rec->channel, "web");
  ASSERT_EQ(rec->turns.size(), 2u);
  EXPECT_EQ(rec->turns[0], a);
  EXPECT_EQ(rec->turns[1], b);
  EXPECT_FALSE(store.conversation("nobody"));
}

TEST(ConversationStore, PersistsAcrossReopen) {
  TempDir dir;
  {
    ConversationStore store(dir / "c.sqlite3");
    store.record_turn("s1", "cli", turn(at("2020-05-01T10:00:00Z")));
  }
  ConversationStore again(dir / "c.sqlite3");
  ASSERT_TRUE(again.conversation("s1"));
  EXPECT_EQ(again.session_ids(), std::vector<std::string>{"s1"});
}

TEST(ConversationStore, RejectsTurnsThatGoBackInTime) {
  TempDir dir;
  ConversationStore store(dir / "c.sqlite3");
  store.record_turn("s1", "web", turn(at("2020-05-01T10:00:00Z")));
  store.record_turn("s1", "web", turn(at("2020-05-01T10:00:00Z")));
  EXPECT_THROW(store.record_turn("s1", "web", turn(at("2020-05-01T09:59:59Z"))), StorageError);
  store.record_turn("s2", "web", turn(at("2020-05-01T09:00:00Z")));
  EXPECT_EQ(store.conversation("s1")->turns.size(), 2u);
}

TEST(ConversationStore, UnopenablePathIsAStorageError) {
  TempDir dir;
  std::ofstream(dir / "file") << "x";
  EXPECT_THROW(ConversationStore((dir / "file") / "c.sqlite3"), std::exception);
  EXPECT_THROW(ConversationStore(dir.path()), StorageError);
}

TEST(ConversationStore, RangeQueryKeepsOnlyTurnsInRange) {
  TempDir dir;
  ConversationStore store(dir / "c.sqlite3");
  store.record_turn("s1", "web", turn(at("2020-04-30T23:59:59Z")));
  store.record_turn("s1", "web", turn(at("2020-05-01T00:00:00Z")));
  store.record_turn("s2", "web", turn(at("2020-05-02T00:00:00Z")));
  store.record_turn("s3", "web", turn(at("2020-04-01T00:00:00Z")));
  const auto recs = store.conversations(at("2020-05-01T00:00:00Z"), at("2020-05-02T00:00:00Z"));
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].session_id, "s1");
  EXPECT_EQ(recs[0].turns.size(), 1u);
}

TEST(ConversationStore, ConcurrentWritersLoseNothing) {
  TempDir dir;
  ConversationStore store(dir / "c.sqlite3");
  const auto base = at("2020-05-01T00:00:00Z");
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) {
        store.record_turn("s" + std::to_string(t), "web", turn(base + seconds(i)));
      }
    });
  }
  for (auto& th : threads) th.join();
  const auto stats = store.usage_stats({base, base + hours(1), day_of("2020-05-01")});
  EXPECT_EQ(stats.unique_users, 8u);
  EXPECT_EQ(stats.total_questions, 400u);
}

TEST(UsageStats, QuestionsPerConversation) {
  TempDir dir;
  ConversationStore store(dir / "c.sqlite3");
  const auto base = at("2020-05-10T08:00:00Z");
  const std::vector<int> turns = {1, 32, 1, 1, 2};
  for (std::size_t c = 0; c < turns.size(); ++c) {
    for (int i = 0; i < turns[c]; ++i) {
      store.record_turn("conv" + std::to_string(c), "web", turn(base + minutes(i)));
    }
  }
  const auto s = store.usage_stats({at("2020-05-01T00:00:00Z"), at("2020-06-01T00:00:00Z"), day_of("2020-05-10")});
  EXPECT_EQ(s.unique_users, 5u);
  EXPECT_EQ(s.total_questions, 37u);
  EXPECT_EQ(s.avg_q_per_conv, 7.4);
  EXPECT_EQ(s.min_q_per_conv, 1u);
  EXPECT_EQ(s.max_q_per_conv, 32u);
}

TEST(UsageStats, Stickiness) {
  TempDir dir;
  ConversationStore store(dir / "c.sqlite3");
  const auto day = day_of("2020-05-30");
  std::vector<PendingTurn> batch;
  for (int u = 0; u < 10000; ++u) {
    // The first 1685 users are active on the reporting day, the rest earlier
    // in the 30-day window.
    const Timestamp t = u < 1685 ? Timestamp{day} + hours(12) : Timestamp{day - days(1 + u % 29)} + hours(3);
    batch.push_back({"u" + std::to_string(u), "web", turn(t)});
  }
  store.record_turns(batch);
  const auto s = store.usage_stats({Timestamp{day - days(29)}, Timestamp{day + days(1)}, day});
  EXPECT_EQ(s.daily_active, 1685u);
  EXPECT_EQ(s.monthly_active, 10000u);
  EXPECT_EQ(s.stickiness, 0.1685);
}

TEST(UsageStats, MonthlyWindowIsThirtyDaysEndingOnTheDay) {
  TempDir dir;
  ConversationStore store(dir / "c.sqlite3");
  const auto day = day_of("2020-05-30");
  store.record_turn("inside", "web", turn(Timestamp{day - days(29)}));
  store.record_turn("outside", "web", turn(Timestamp{day - days(30)} + hours(23)));
  store.record_turn("today", "web", turn(Timestamp{day} + hours(23) + minutes(59)));
  store.record_turn("tomorrow", "web", turn(Timestamp{day + days(1)}));
  const auto s = store.usage_stats({Timestamp{day - days(60)}, Timestamp{day + days(2)}, day});
  EXPECT_EQ(s.daily_active, 1u);
  EXPECT_EQ(s.monthly_active, 2u);
  EXPECT_EQ(s.stickiness, 0.5);
}

TEST(UsageStats, EmptyStoreAndBadRange) {
  TempDir dir;
  ConversationStore store(dir / "c.sqlite3");
  const auto day = day_of("2020-05-30");
  const auto s = store.usage_stats({Timestamp{day}, Timestamp{day + days(1)}, day});
  EXPECT_EQ(s.unique_users, 0u);
  EXPECT_EQ(s.avg_q_per_conv, 0.0);
  EXPECT_EQ(s.stickiness, 0.0);
  EXPECT_THROW(store.usage_stats({Timestamp{day}, Timestamp{day}, day}), Error);
}

TEST(UsageStats, MatchesInMemoryOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    TempDir dir;
    ConversationStore store(dir / "c.sqlite3");
    const Timestamp origin = Timestamp{day_of("2020-04-01")};
    const Timestamp from = origin + days(10), to = origin + days(40);
    const sys_days day = day_of("2020-04-01") + days(20 + rng.index(30));

    std::map<std::string, std::vector<Timestamp>> sessions;
    std::vector<PendingTurn> batch;
    const auto n_sessions = 1 + rng.index(40);
    for (std::size_t s = 0; s < n_sessions; ++s) {
      const std::string id = "s" + std::to_string(s);
      Timestamp t = origin + milliseconds(static_cast<std::int64_t>(rng.index(60ULL * 86400000)));
      const auto n = 1 + rng.index(10);
      for (std::size_t i = 0; i < n; ++i) {
        batch.push_back({id, "web", turn(t)});
        sessions[id].push_back(t);
        t += milliseconds(static_cast<std::int64_t>(rng.index(3ULL * 86400000)));
      }
    }
    store.record_turns(batch);

    std::size_t users = 0, total = 0, mn = 0, mx = 0, dau = 0, mau = 0;
    const Timestamp d0{day}, d1{day + days(1)}, m0{day - days(29)};
    for (const auto& [id, ts] : sessions) {
      std::size_t in_range = 0;
      bool daily = false, monthly = false;
      for (auto t : ts) {
        in_range += t >= from && t < to;
        daily |= t >= d0 && t < d1;
        monthly |= t >= m0 && t < d1;
      }
      dau += daily;
      mau += monthly;
      if (in_range == 0) continue;
      mn = users == 0 ? in_range : std::min(mn, in_range);
      mx = std::max(mx, in_range);
      ++users;
      total += in_range;
    }
    const auto s = store.usage_stats({from, to, day});
    EXPECT_EQ(s.unique_users, users);
    EXPECT_EQ(s.total_questions, total);
    EXPECT_EQ(s.min_q_per_conv, mn);
    EXPECT_EQ(s.max_q_per_conv, mx);
    EXPECT_EQ(s.daily_active, dau);
    EXPECT_EQ(s.monthly_active, mau);
    if (users > 0) EXPECT_EQ(s.avg_q_per_conv, static_cast<double>(total) / static_cast<double>(users));
    if (mau > 0) EXPECT_EQ(s.stickiness, static_cast<double>(dau) / static_cast<double>(mau));
  }
}

TEST(EscapeField, Examples) {
  EXPECT_EQ(escape_field("a\tb\nc\\d\re"), "a\\tb\\nc\\\\d\\re");
  EXPECT_EQ(unescape_field("a\\tb\\nc\\\\d\\re"), "a\tb\nc\\d\re");
  EXPECT_EQ(escape_field("plain"), "plain");
}

TEST(EscapeField, RoundTripsAndLeavesNoRawSeparators) {
  Rng rng(3);
  static constexpr char kAlphabet[] = {'a', '\\', '\t', '\n', '\r', 't', 'n', ' '};
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const auto len = rng.index(12);
    for (std::size_t k = 0; k < len; ++k) s += kAlphabet[rng.index(sizeof kAlphabet)];
    const auto e = escape_field(s);
    ASSERT_EQ(e.find_first_of("\t\n\r"), std::string::npos);
    ASSERT_EQ(unescape_field(e), s);
  }
}

TEST(UnansweredLog, OneLinePerEntry) {
  TempDir dir;
  UnansweredLog log(dir / "sub" / "unanswered.tsv");
  EXPECT_EQ(log.line_count(), 0u);
  EXPECT_TRUE(log.read_all().empty());
  log.append("qqqq", at("2020-05-01T10:00:00Z"), "web");
  log.append("multi\nline\ttext", at("2020-05-01T10:00:01Z"), "messenger_sim");
  EXPECT_EQ(log.line_count(), 2u);
  const auto entries = log.read_all();
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0], (UnansweredEntry{"2020-05-01T10:00:00Z", "web", "qqqq"}));
  EXPECT_EQ(entries[1].text, "multi\nline\ttext");
  EXPECT_EQ(entries[1].channel, "messenger_sim");
}

TEST(UnansweredLog, ConcurrentAppendsStayWhole) {
  TempDir dir;
  UnansweredLog log(dir / "u.tsv");
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 100; ++i) log.append(std::string(200, 'x'), now_utc(), "web");
    });
  }
  for (auto& th : threads) th.join();
  const auto entries = log.read_all();
  ASSERT_EQ(entries.size(), 400u);
  for (const auto& e : entries) EXPECT_EQ(e.text.size(), 200u);
}

TEST(DataPaths, CreatesDirectory) {
  TempDir dir;
  const auto paths = data_paths(dir / "a" / "b");
  EXPECT_TRUE(std::filesystem::is_directory(dir / "a" / "b"));
  EXPECT_EQ(paths.conversations.filename(), "conversations.sqlite3");
  EXPECT_EQ(paths.unanswered.filename(), "unanswered.tsv");
}

}  // namespace
}  // namespace crisisbot::datastore
