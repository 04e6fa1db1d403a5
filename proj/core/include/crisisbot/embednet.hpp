#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crisisbot/common.hpp"
#include "crisisbot/corpus.hpp"
#include "crisisbot/featurizer.hpp"

namespace crisisbot::embed {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Hyperparams {
  int dim_embed = 20;
  int dim_hidden = 128;
  double margin_pos = 0.8;
  double margin_neg = -0.4;
  int negatives_per_example = 10;
  double learning_rate = 0.01;
  int epochs = 300;
  double l2 = 1e-6;
  std::uint64_t rng_seed = 42;

  /// Throws Error when a field is out of range.
  void validate() const;

  bool operator==(const Hyperparams&) const = default;
};

/// How the training set was carved out of the catalog, so that calibration
/// can recover the exact held-out part later.
struct SplitInfo {
  double validation_fraction = corpus::kDefaultValidationFraction;
  std::uint64_t seed = 42;

  bool operator==(const SplitInfo&) const = default;
};

/// Input tower: h0 = sum_i x_i * gram_table[i], h1 = relu(w1 * h0 + b1),
/// out = w2 * h1 + b2. Labels are plain rows of label_table living in the
/// same dim_embed space as `out`.
struct EmbeddingModel {
  features::Vocabulary vocab;
  Hyperparams hp;
  std::optional<SplitInfo> split;

  Matrix gram_table;   // |V| x dim_hidden
  Matrix w1;           // dim_hidden x dim_hidden
  Vector b1;           // dim_hidden
  Matrix w2;           // dim_embed x dim_hidden
  Vector b2;           // dim_embed
  Matrix label_table;  // L x dim_embed

  std::size_t num_labels() const { return static_cast<std::size_t>(label_table.rows()); }
  bool all_finite() const;

  bool operator==(const EmbeddingModel& other) const;
};

EmbeddingModel init_model(features::Vocabulary vocab, const Hyperparams& hp);

Vector embed_input(const EmbeddingModel& model, const features::SparseVector& x);
Vector embed_label(const EmbeddingModel& model, std::size_t intent_index);

/// a.b / (|a||b|) clamped to [-1, 1]; 0 when either norm is below 1e-12.
double cosine(std::span<const double> a, std::span<const double> b);
double cosine(const Vector& a, const Vector& b);

struct EncodedExample {
  features::SparseVector input;
  std::size_t label = 0;
};

std::vector<EncodedExample> encode_examples(const EmbeddingModel& model,
                                            std::span<const corpus::LabeledExample> examples);

/// Margin ranking loss in cosine space:
///   max(0, margin_pos - s+) + sum over negatives of max(0, s- - margin_neg).
double loss(const EmbeddingModel& model, const EncodedExample& example, std::span<const std::size_t> negatives);

/// Gradients of `loss` for one example. The gram-table gradient is rank one
/// over the active rows: d gram_table[i] = x_i * d_h0.
struct Gradients {
  Vector d_h0;
  Matrix d_w1;
  Vector d_b1;
  Matrix d_w2;
  Vector d_b2;
  std::vector<std::pair<std::size_t, Vector>> d_labels;
};

double loss_with_gradients(const EmbeddingModel& model, const EncodedExample& example,
                           std::span<const std::size_t> negatives, Gradients& grads);

struct TrainReport {
  std::vector<double> loss_per_epoch;
  double final_train_accuracy = 0.0;
};

/// Plain SGD, batch size one, negatives sampled without replacement, l2 decay
/// applied to the parameters each step touches. Deterministic for a fixed
/// hp.rng_seed. Throws Error on fewer than 2 labels or a non-finite loss.
TrainReport train(EmbeddingModel& model, std::span<const EncodedExample> examples);

/// Fraction of examples whose nearest label (cosine, ties to lower index) is
/// the true one.
double train_accuracy(const EmbeddingModel& model, std::span<const EncodedExample> examples);

inline constexpr std::uint32_t kModelFormatVersion = 1;

class ModelFormatError : public Error {
 public:
  enum class Kind { io, format, version, checksum };
  ModelFormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string serialize_model(const EmbeddingModel& model);
EmbeddingModel deserialize_model(std::string_view bytes);
void save_model(const EmbeddingModel& model, const std::filesystem::path& path);
EmbeddingModel load_model(const std::filesystem::path& path);

/// CRC-32 of the serialized artifact, as 8 hex digits.
std::string model_fingerprint(const EmbeddingModel& model);

}  // namespace crisisbot::embed
