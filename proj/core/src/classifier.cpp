#include "crisisbot/classifier.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#include "crisisbot/datastore.hpp"

namespace crisisbot::classify {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const ScoredIntent& Prediction::top() const {
  if (ranked.empty()) throw Error("empty prediction");
  return ranked.front();
}

Prediction rank(const embed::EmbeddingModel& model, const embed::Vector& input_embedding) {
  Prediction p;
  const auto& tags = model.vocab.tags();
  p.ranked.reserve(model.num_labels());
  for (std::size_t k = 0; k < model.num_labels(); ++k) {
    p.ranked.push_back({tags[k], k, embed::cosine(input_embedding, embed::embed_label(model, k))});
  }
  std::stable_sort(p.ranked.begin(), p.ranked.end(), [](const ScoredIntent& a, const ScoredIntent& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.index < b.index;
  });
  return p;
}

Prediction predict(const embed::EmbeddingModel& model, std::string_view text) {
  return rank(model, embed::embed_input(model, features::featurize(text, model.vocab)));
}

double threshold_from_rows(std::span<const CalibrationRow> rows) {
  double threshold = std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& r : rows) {
    if (!r.correct) continue;
    threshold = std::min(threshold, r.confidence);
    any = true;
  }
  if (!any) throw UncalibratableError("no validation question was predicted correctly; threshold is undefined");
  return threshold;
}

CalibrationReport calibrate_threshold(const embed::EmbeddingModel& model,
                                      std::span<const corpus::LabeledExample> validation) {
  if (validation.empty()) throw Error("calibration needs a non-empty validation set");
  CalibrationReport report;
  for (const auto& ex : validation) {
    const Prediction p = predict(model, ex.text);
    const ScoredIntent& top = p.top();
    const bool correct = top.intent_id == ex.intent_id;
    report.per_example.push_back({ex.text, ex.intent_id, top.intent_id, top.confidence, correct});
    if (correct) ++report.n_correct;
  }
  report.threshold = threshold_from_rows(report.per_example);
  return report;
}

double evaluate_accuracy(const embed::EmbeddingModel& model, std::span<const corpus::LabeledExample> dataset) {
  if (dataset.empty()) throw Error("accuracy of an empty dataset is undefined");
  std::size_t correct = 0;
  for (const auto& ex : dataset) {
    if (predict(model, ex.text).top().intent_id == ex.intent_id) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

void write_report(const CalibrationReport& report, std::ostream& out) {
  out << "# threshold\t" << format_double(report.threshold) << "\n";
  out << "# n_correct\t" << report.n_correct << "\n";
  out << "text\ttrue_intent\tpredicted_intent\tconfidence\tcorrect\n";
  for (const auto& row : report.per_example) {
    out << datastore::escape_field(row.text) << '\t' << row.true_intent << '\t' << row.predicted_intent << '\t'
        << format_double(row.confidence) << '\t' << (row.correct ? 1 : 0) << '\n';
  }
}

void save_report(const CalibrationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write calibration report: " + path.string());
  write_report(report, out);
  if (!out) throw Error("failed writing calibration report: " + path.string());
}

double read_threshold(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open calibration report: " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    constexpr std::string_view prefix = "# threshold\t";
    if (line.starts_with(prefix)) {
      try {
        return std::stod(line.substr(prefix.size()));
      } catch (const std::exception&) {
        break;
      }
    }
  }
  throw Error("calibration report has no readable threshold line: " + path.string());
}

}  // namespace crisisbot::classify
