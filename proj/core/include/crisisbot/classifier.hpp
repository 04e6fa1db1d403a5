#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crisisbot/corpus.hpp"
#include "crisisbot/embednet.hpp"

namespace crisisbot::classify {

struct ScoredIntent {
  std::string intent_id;
  std::size_t index = 0;
  double confidence = 0.0;  // raw cosine, in [-1, 1]

  bool operator==(const ScoredIntent&) const = default;
};

/// Every intent exactly once, by confidence descending, ties to the lower
/// tag index.
struct Prediction {
  std::vector<ScoredIntent> ranked;

  const ScoredIntent& top() const;
  bool operator==(const Prediction&) const = default;
};

Prediction rank(const embed::EmbeddingModel& model, const embed::Vector& input_embedding);
Prediction predict(const embed::EmbeddingModel& model, std::string_view text);

struct CalibrationRow {
  std::string text;
  std::string true_intent;
  std::string predicted_intent;
  double confidence = 0.0;
  bool correct = false;
};

struct CalibrationReport {
  double threshold = 0.0;
  std::vector<CalibrationRow> per_example;
  std::size_t n_correct = 0;
};

class UncalibratableError : public Error {
 public:
  using Error::Error;
};

/// Minimum confidence over the rows marked correct. Throws
/// UncalibratableError when no row is correct.
double threshold_from_rows(std::span<const CalibrationRow> rows);

/// threshold = min over correctly predicted validation questions of their
/// top-1 confidence. Throws UncalibratableError if none is correct.
CalibrationReport calibrate_threshold(const embed::EmbeddingModel& model,
                                      std::span<const corpus::LabeledExample> validation);

double evaluate_accuracy(const embed::EmbeddingModel& model, std::span<const corpus::LabeledExample> dataset);

/// Tab-separated report: `# threshold` and `# n_correct` preamble lines, a
/// header, then one row per validation example. Confidences are written with
/// 17 significant digits so the threshold reads back bit-exactly.
void write_report(const CalibrationReport& report, std::ostream& out);
void save_report(const CalibrationReport& report, const std::filesystem::path& path);
double read_threshold(const std::filesystem::path& path);

}  // namespace crisisbot::classify
