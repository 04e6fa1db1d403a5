#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "crisisbot/common.hpp"
#include "crisisbot/datastore.hpp"

namespace crisisbot::evalkit {

/// One judge's label for one bot response.
struct Judgment {
  std::string conversation_id;
  std::size_t turn_index = 0;
  std::string judge_id;
  bool sensible = false;
  bool specific = false;  // implies sensible

  bool operator==(const Judgment&) const = default;
};

struct IngestResult {
  std::vector<Judgment> judgments;
  std::size_t coerced = 0;  // rows labelled specific but not sensible
};

/// Reads the tab-separated judgment file
///   conversation_id  turn_index  judge_id  sensible  specific
/// with 0/1 booleans. Throws Error naming the row on malformed input.
IngestResult ingest_judgments(const std::filesystem::path& path);
IngestResult ingest_judgments(std::istream& in);

struct SsaReport {
  double sensibleness = 0.0;
  double specificity = 0.0;
  double ssa = 0.0;
  std::size_t n_responses = 0;
  std::size_t n_judges = 0;
};

/// Per-response majority vote over judges (a tie counts as negative), then
/// the two rates and their mean. Throws Error on empty input.
SsaReport ssa(std::span<const Judgment> judgments);

/// Writes a labelling sheet for `count` randomly chosen conversations having
/// at least `min_turns` turns: one row per (conversation, turn) with the
/// question and reply text, in the judgment file layout with empty labels.
/// Returns the number of conversations written.
std::size_t write_sample_sheet(const datastore::ConversationStore& store, std::size_t count, std::size_t min_turns,
                               std::uint64_t seed, std::ostream& out);

}  // namespace crisisbot::evalkit
