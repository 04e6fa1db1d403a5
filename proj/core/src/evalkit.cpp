#include "crisisbot/evalkit.hpp"

#include <spdlog/spdlog.h>

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "crisisbot/random.hpp"

namespace crisisbot::evalkit {

namespace {

constexpr std::string_view kHeader[] = {"conversation_id", "turn_index", "judge_id", "sensible", "specific"};

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

bool parse_flag(const std::string& s, bool& out) {
  if (s == "0") {
    out = false;
    return true;
  }
  if (s == "1") {
    out = true;
    return true;
  }
  return false;
}

}  // namespace

IngestResult ingest_judgments(std::istream& in) {
  IngestResult result;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (!header_seen) {
      bool ok = fields.size() >= std::size(kHeader);
      for (std::size_t i = 0; ok && i < std::size(kHeader); ++i) ok = fields[i] == kHeader[i];
      if (!ok) throw Error("judgment file line 1: expected header conversation_id, turn_index, judge_id, sensible, specific");
      header_seen = true;
      continue;
    }
    const std::string where = "judgment file line " + std::to_string(line_no);
    if (fields.size() < std::size(kHeader)) throw Error(where + ": expected 5 tab-separated fields");
    Judgment j;
    j.conversation_id = fields[0];
    j.judge_id = fields[2];
    if (j.conversation_id.empty() || j.judge_id.empty()) throw Error(where + ": empty conversation_id or judge_id");
    const auto& idx = fields[1];
    const auto [end, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), j.turn_index);
    if (idx.empty() || ec != std::errc{} || end != idx.data() + idx.size()) {
      throw Error(where + ": turn_index is not a non-negative integer");
    }
    if (!parse_flag(fields[3], j.sensible) || !parse_flag(fields[4], j.specific)) {
      throw Error(where + ": sensible and specific must be 0 or 1");
    }
    if (j.specific && !j.sensible) {
      j.specific = false;
      ++result.coerced;
    }
    result.judgments.push_back(std::move(j));
  }
  if (result.coerced > 0) {
    spdlog::warn("{} judgment(s) marked specific but not sensible were counted as not specific", result.coerced);
  }
  return result;
}

IngestResult ingest_judgments(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open judgment file: " + path.string());
  return ingest_judgments(in);
}

SsaReport ssa(std::span<const Judgment> judgments) {
  if (judgments.empty()) throw Error("SSA of an empty judgment set is undefined");

  struct Votes {
    std::size_t total = 0;
    std::size_t sensible = 0;
    std::size_t specific = 0;
  };
  std::map<std::pair<std::string, std::size_t>, Votes> responses;
  std::set<std::string> judges;
  for (const auto& j : judgments) {
    auto& v = responses[{j.conversation_id, j.turn_index}];
    ++v.total;
    const bool specific = j.specific && j.sensible;
    if (j.sensible) ++v.sensible;
    if (specific) ++v.specific;
    judges.insert(j.judge_id);
  }

  std::size_t sensible = 0;
  std::size_t specific = 0;
  for (const auto& [key, v] : responses) {
    if (2 * v.sensible > v.total) ++sensible;
    if (2 * v.specific > v.total) ++specific;
  }

  SsaReport r;
  r.n_responses = responses.size();
  r.n_judges = judges.size();
  r.sensibleness = static_cast<double>(sensible) / static_cast<double>(r.n_responses);
  r.specificity = static_cast<double>(specific) / static_cast<double>(r.n_responses);
  r.ssa = (r.sensibleness + r.specificity) / 2.0;
  return r;
}

std::size_t write_sample_sheet(const datastore::ConversationStore& store, std::size_t count, std::size_t min_turns,
                               std::uint64_t seed, std::ostream& out) {
  std::vector<datastore::ConversationRecord> eligible;
  for (const auto& id : store.session_ids()) {
    auto rec = store.conversation(id);
    if (rec && rec->turns.size() >= min_turns) eligible.push_back(std::move(*rec));
  }
  Rng rng(seed);
  rng.shuffle(std::span<datastore::ConversationRecord>(eligible));
  if (eligible.size() > count) eligible.resize(count);

  out << "conversation_id\tturn_index\tjudge_id\tsensible\tspecific\tquestion\treply\n";
  for (const auto& rec : eligible) {
    for (std::size_t i = 0; i < rec.turns.size(); ++i) {
      out << rec.session_id << '\t' << i << "\t\t\t\t" << datastore::escape_field(rec.turns[i].user_text) << '\t'
          << datastore::escape_field(rec.turns[i].reply_text) << '\n';
    }
  }
  return eligible.size();
}

}  // namespace crisisbot::evalkit
