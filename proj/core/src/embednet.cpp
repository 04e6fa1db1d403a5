#include "crisisbot/embednet.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "crisisbot/random.hpp"

namespace crisisbot::embed {

static_assert(std::endian::native == std::endian::little, "model files are written little-endian");

namespace {

constexpr double kDegenerateNorm = 1e-12;
constexpr char kMagic[8] = {'C', 'R', 'B', 'O', 'T', 'M', 'D', 'L'};

struct Forward {
  Vector h0;
  Vector z1;
  Vector h1;
  Vector out;
};

Forward forward(const EmbeddingModel& m, const features::SparseVector& x) {
  if (x.dimension != static_cast<std::size_t>(m.gram_table.rows())) {
    throw Error("input dimension " + std::to_string(x.dimension) + " does not match vocabulary size " +
                std::to_string(m.gram_table.rows()));
  }
  Forward f;
  f.h0 = Vector::Zero(m.hp.dim_hidden);
  for (const auto& [index, value] : x.entries) {
    f.h0 += value * m.gram_table.row(index).transpose();
  }
  f.z1 = m.w1 * f.h0 + m.b1;
  f.h1 = f.z1.cwiseMax(0.0);
  f.out = m.w2 * f.h1 + m.b2;
  return f;
}

// Cosine plus its partial derivatives; derivatives are zero on the
// degenerate branch.
double cosine_with_grads(const Vector& a, const Vector& b, Vector* da, Vector* db) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na < kDegenerateNorm || nb < kDegenerateNorm) {
    if (da) *da = Vector::Zero(a.size());
    if (db) *db = Vector::Zero(b.size());
    return 0.0;
  }
  const double s = a.dot(b) / (na * nb);
  if (da) *da = b / (na * nb) - s * a / (na * na);
  if (db) *db = a / (na * nb) - s * b / (nb * nb);
  return std::clamp(s, -1.0, 1.0);
}

void check_negatives(const EmbeddingModel& m, const EncodedExample& ex, std::span<const std::size_t> negatives) {
  if (negatives.empty()) throw Error("loss needs at least one negative label");
  if (ex.label >= m.num_labels()) throw Error("label index out of range");
  for (std::size_t n : negatives) {
    if (n == ex.label) throw Error("negative list contains the true label");
    if (n >= m.num_labels()) throw Error("negative label index out of range");
  }
}

void fill_uniform(Rng& rng, Matrix& m, double bound) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
  }
}

void fill_uniform(Rng& rng, Vector& v, double bound) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-bound, bound);
}

std::size_t nearest_label(const EmbeddingModel& m, const Vector& out) {
  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t k = 0; k < m.num_labels(); ++k) {
    const double s = cosine(out, Vector(m.label_table.row(k).transpose()));
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return best;
}

// --- binary writer / reader -------------------------------------------------

class Writer {
 public:
  template <typename T>
  void pod(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    buf_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  template <typename Derived>
  void tensor(const Eigen::DenseBase<Derived>& t) {
    pod<std::uint64_t>(static_cast<std::uint64_t>(t.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) pod<double>(t(r, c));
    }
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const auto rows = pod<std::uint64_t>();
    const auto cols = pod<std::uint64_t>();
    if (rows > (1u << 28) || cols > (1u << 20)) throw ModelFormatError(ModelFormatError::Kind::format, "tensor too large");
    need(rows * cols * sizeof(double));
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = pod<double>();
    }
    return m;
  }
  Vector vector() {
    Matrix m = matrix();
    if (m.cols() != 1) throw ModelFormatError(ModelFormatError::Kind::format, "expected a column vector");
    return m.col(0);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw ModelFormatError(ModelFormatError::Kind::format, "model file ends early");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void Hyperparams::validate() const {
  if (dim_embed <= 0) throw Error("dim_embed must be positive");
  if (dim_hidden <= 0) throw Error("dim_hidden must be positive");
  if (!(margin_pos > margin_neg)) throw Error("margin_pos must exceed margin_neg");
  if (negatives_per_example < 1) throw Error("negatives_per_example must be at least 1");
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (epochs < 0) throw Error("epochs must be non-negative");
  if (!(l2 >= 0.0)) throw Error("l2 must be non-negative");
}

bool EmbeddingModel::all_finite() const {
  return gram_table.allFinite() && w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() &&
         label_table.allFinite();
}

bool EmbeddingModel::operator==(const EmbeddingModel& o) const {
  return vocab == o.vocab && hp == o.hp && split == o.split && gram_table == o.gram_table && w1 == o.w1 &&
         b1 == o.b1 && w2 == o.w2 && b2 == o.b2 && label_table == o.label_table;
}

EmbeddingModel init_model(features::Vocabulary vocab, const Hyperparams& hp) {
  hp.validate();
  if (vocab.num_grams() == 0) throw Error("cannot initialise a model over an empty gram vocabulary");
  if (vocab.num_tags() == 0) throw Error("cannot initialise a model without intent tags");

  EmbeddingModel m;
  m.hp = hp;
  const auto grams = static_cast<Eigen::Index>(vocab.num_grams());
  const auto labels = static_cast<Eigen::Index>(vocab.num_tags());
  m.vocab = std::move(vocab);

  m.gram_table.resize(grams, hp.dim_hidden);
  m.w1.resize(hp.dim_hidden, hp.dim_hidden);
  m.b1.resize(hp.dim_hidden);
  m.w2.resize(hp.dim_embed, hp.dim_hidden);
  m.b2.resize(hp.dim_embed);
  m.label_table.resize(labels, hp.dim_embed);

  // Fan-in: lookup tables use their row width, dense layers their input width.
  Rng rng(hp.rng_seed);
  fill_uniform(rng, m.gram_table, 1.0 / std::sqrt(static_cast<double>(hp.dim_hidden)));
  fill_uniform(rng, m.w1, 1.0 / std::sqrt(static_cast<double>(hp.dim_hidden)));
  fill_uniform(rng, m.b1, 1.0 / std::sqrt(static_cast<double>(hp.dim_hidden)));
  fill_uniform(rng, m.w2, 1.0 / std::sqrt(static_cast<double>(hp.dim_hidden)));
  fill_uniform(rng, m.b2, 1.0 / std::sqrt(static_cast<double>(hp.dim_hidden)));
  fill_uniform(rng, m.label_table, 1.0 / std::sqrt(static_cast<double>(hp.dim_embed)));
  return m;
}

Vector embed_input(const EmbeddingModel& model, const features::SparseVector& x) { return forward(model, x).out; }

Vector embed_label(const EmbeddingModel& model, std::size_t intent_index) {
  if (intent_index >= model.num_labels()) {
    throw Error("intent index " + std::to_string(intent_index) + " out of range (" +
                std::to_string(model.num_labels()) + " labels)");
  }
  return model.label_table.row(static_cast<Eigen::Index>(intent_index)).transpose();
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("cosine of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kDegenerateNorm || nb < kDegenerateNorm) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error("cosine of vectors with different lengths");
  return cosine_with_grads(a, b, nullptr, nullptr);
}

std::vector<EncodedExample> encode_examples(const EmbeddingModel& model,
                                            std::span<const corpus::LabeledExample> examples) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    auto label = model.vocab.tag_index(ex.intent_id);
    if (!label) throw Error("intent \"" + ex.intent_id + "\" is not known to the model");
    out.push_back({features::featurize(ex.text, model.vocab), *label});
  }
  return out;
}

double loss(const EmbeddingModel& model, const EncodedExample& example, std::span<const std::size_t> negatives) {
  check_negatives(model, example, negatives);
  const Vector out = embed_input(model, example.input);
  const double s_pos = cosine(out, embed_label(model, example.label));
  double total = std::max(0.0, model.hp.margin_pos - s_pos);
  for (std::size_t n : negatives) {
    total += std::max(0.0, cosine(out, embed_label(model, n)) - model.hp.margin_neg);
  }
  return total;
}

double loss_with_gradients(const EmbeddingModel& m, const EncodedExample& example,
                           std::span<const std::size_t> negatives, Gradients& g) {
  check_negatives(m, example, negatives);
  const Forward f = forward(m, example.input);

  Vector g_out = Vector::Zero(m.hp.dim_embed);
  g.d_labels.clear();
  double total = 0.0;

  auto term = [&](std::size_t label, double sign, double margin) {
    const Vector row = m.label_table.row(static_cast<Eigen::Index>(label)).transpose();
    Vector d_out, d_row;
    const double s = cosine_with_grads(f.out, row, &d_out, &d_row);
    // sign = -1: max(0, margin - s); sign = +1: max(0, s - margin)
    const double hinge = sign < 0 ? margin - s : s - margin;
    if (hinge > 0.0) {
      total += hinge;
      g_out += sign * d_out;
      g.d_labels.emplace_back(label, sign * d_row);
    } else {
      g.d_labels.emplace_back(label, Vector::Zero(m.hp.dim_embed));
    }
  };
  term(example.label, -1.0, m.hp.margin_pos);
  for (std::size_t n : negatives) term(n, 1.0, m.hp.margin_neg);

  g.d_w2 = g_out * f.h1.transpose();
  g.d_b2 = g_out;
  const Vector g_h1 = m.w2.transpose() * g_out;
  const Vector g_z1 = (f.z1.array() > 0.0).select(g_h1, 0.0);
  g.d_w1 = g_z1 * f.h0.transpose();
  g.d_b1 = g_z1;
  g.d_h0 = m.w1.transpose() * g_z1;
  return total;
}

double train_accuracy(const EmbeddingModel& model, std::span<const EncodedExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    if (nearest_label(model, embed_input(model, ex.input)) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

TrainReport train(EmbeddingModel& model, std::span<const EncodedExample> examples) {
  const Hyperparams& hp = model.hp;
  hp.validate();
  const std::size_t labels = model.num_labels();
  if (labels < 2) throw Error("training needs at least 2 distinct intents");
  if (examples.empty()) throw Error("training needs at least one example");
  for (const auto& ex : examples) {
    if (ex.label >= labels) throw Error("training example label out of range");
  }

  Rng rng(hp.rng_seed ^ 0x5DEECE66DULL);
  const double lr = hp.learning_rate;
  const double decay = hp.l2;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(hp.negatives_per_example), labels - 1);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> candidates;
  candidates.reserve(labels);
  std::vector<std::size_t> negatives(k);
  Gradients g;

  TrainReport report;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t pos : order) {
      const EncodedExample& ex = examples[pos];

      candidates.clear();
      for (std::size_t l = 0; l < labels; ++l) {
        if (l != ex.label) candidates.push_back(l);
      }
      for (std::size_t i = 0; i < k; ++i) {
        std::swap(candidates[i], candidates[i + rng.index(candidates.size() - i)]);
        negatives[i] = candidates[i];
      }

      const double value = loss_with_gradients(model, ex, negatives, g);
      if (!std::isfinite(value)) {
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", example " + std::to_string(pos));
      }
      epoch_loss += value;

      model.w1 -= lr * (g.d_w1 + decay * model.w1);
      model.b1 -= lr * (g.d_b1 + decay * model.b1);
      model.w2 -= lr * (g.d_w2 + decay * model.w2);
      model.b2 -= lr * (g.d_b2 + decay * model.b2);
      for (const auto& [index, value_x] : ex.input.entries) {
        auto row = model.gram_table.row(index);
        row -= lr * (value_x * g.d_h0.transpose() + decay * row);
      }
      for (const auto& [label, d_row] : g.d_labels) {
        auto row = model.label_table.row(static_cast<Eigen::Index>(label));
        row -= lr * (d_row.transpose() + decay * row);
      }
    }
    report.loss_per_epoch.push_back(epoch_loss / static_cast<double>(examples.size()));
  }
  if (!model.all_finite()) throw Error("training produced non-finite weights");
  report.final_train_accuracy = train_accuracy(model, examples);
  return report;
}

std::string serialize_model(const EmbeddingModel& m) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kModelFormatVersion);

  const Hyperparams& hp = m.hp;
  w.pod<std::int32_t>(hp.dim_embed);
  w.pod<std::int32_t>(hp.dim_hidden);
  w.pod<double>(hp.margin_pos);
  w.pod<double>(hp.margin_neg);
  w.pod<std::int32_t>(hp.negatives_per_example);
  w.pod<double>(hp.learning_rate);
  w.pod<std::int32_t>(hp.epochs);
  w.pod<double>(hp.l2);
  w.pod<std::uint64_t>(hp.rng_seed);

  w.pod<std::uint8_t>(m.split ? 1 : 0);
  w.pod<double>(m.split ? m.split->validation_fraction : 0.0);
  w.pod<std::uint64_t>(m.split ? m.split->seed : 0);

  w.pod<std::int32_t>(m.vocab.range().n_min);
  w.pod<std::int32_t>(m.vocab.range().n_max);
  w.pod<std::uint8_t>(m.vocab.normalize_options().strip_arabic_diacritics ? 1 : 0);
  w.pod<std::uint8_t>(m.vocab.normalize_options().fold_arabic_digits ? 1 : 0);
  w.pod<std::uint64_t>(m.vocab.grams().size());
  for (const auto& g : m.vocab.grams()) w.str(g);
  w.pod<std::uint64_t>(m.vocab.tags().size());
  for (const auto& t : m.vocab.tags()) w.str(t);

  w.tensor(m.gram_table);
  w.tensor(m.w1);
  w.tensor(m.b1);
  w.tensor(m.w2);
  w.tensor(m.b2);
  w.tensor(m.label_table);

  w.pod<std::uint32_t>(crc_of(w.bytes()));
  return std::move(w.bytes());
}

EmbeddingModel deserialize_model(std::string_view bytes) {
  using Kind = ModelFormatError::Kind;
  constexpr std::size_t kHeader = sizeof(kMagic) + sizeof(std::uint32_t);
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ModelFormatError(Kind::format, "not a crisisbot model file");
  }
  if (bytes.size() < kHeader + sizeof(std::uint32_t)) throw ModelFormatError(Kind::checksum, "model file truncated");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  if (version != kModelFormatVersion) {
    throw ModelFormatError(Kind::version, "unsupported model format version " + std::to_string(version) +
                                              " (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - sizeof(std::uint32_t));
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), sizeof(stored));
  if (crc_of(body) != stored) throw ModelFormatError(Kind::checksum, "model file checksum mismatch");

  Reader r(body.substr(kHeader));
  EmbeddingModel m;
  Hyperparams& hp = m.hp;
  hp.dim_embed = r.pod<std::int32_t>();
  hp.dim_hidden = r.pod<std::int32_t>();
  hp.margin_pos = r.pod<double>();
  hp.margin_neg = r.pod<double>();
  hp.negatives_per_example = r.pod<std::int32_t>();
  hp.learning_rate = r.pod<double>();
  hp.epochs = r.pod<std::int32_t>();
  hp.l2 = r.pod<double>();
  hp.rng_seed = r.pod<std::uint64_t>();

  const bool has_split = r.pod<std::uint8_t>() != 0;
  const double fraction = r.pod<double>();
  const auto split_seed = r.pod<std::uint64_t>();
  if (has_split) m.split = SplitInfo{fraction, split_seed};

  features::NgramRange range;
  range.n_min = r.pod<std::int32_t>();
  range.n_max = r.pod<std::int32_t>();
  features::NormalizeOptions norm;
  norm.strip_arabic_diacritics = r.pod<std::uint8_t>() != 0;
  norm.fold_arabic_digits = r.pod<std::uint8_t>() != 0;
  std::vector<std::string> grams(r.pod<std::uint64_t>());
  for (auto& g : grams) g = r.str();
  std::vector<std::string> tags(r.pod<std::uint64_t>());
  for (auto& t : tags) t = r.str();
  try {
    m.vocab = features::Vocabulary(std::move(grams), std::move(tags), range, norm);
  } catch (const Error& e) {
    throw ModelFormatError(Kind::format, e.what());
  }

  m.gram_table = r.matrix();
  m.w1 = r.matrix();
  m.b1 = r.vector();
  m.w2 = r.matrix();
  m.b2 = r.vector();
  m.label_table = r.matrix();
  if (!r.done()) throw ModelFormatError(Kind::format, "trailing bytes in model file");

  const auto hidden = static_cast<Eigen::Index>(hp.dim_hidden);
  const auto embed = static_cast<Eigen::Index>(hp.dim_embed);
  const bool shapes_ok = m.gram_table.rows() == static_cast<Eigen::Index>(m.vocab.num_grams()) &&
                         m.gram_table.cols() == hidden && m.w1.rows() == hidden && m.w1.cols() == hidden &&
                         m.b1.size() == hidden && m.w2.rows() == embed && m.w2.cols() == hidden &&
                         m.b2.size() == embed &&
                         m.label_table.rows() == static_cast<Eigen::Index>(m.vocab.num_tags()) &&
                         m.label_table.cols() == embed;
  if (!shapes_ok) throw ModelFormatError(Kind::format, "tensor shapes do not match the vocabulary");
  return m;
}

void save_model(const EmbeddingModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelFormatError(ModelFormatError::Kind::io, "cannot write model file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelFormatError(ModelFormatError::Kind::io, "failed writing model file: " + path.string());
}

EmbeddingModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFormatError(ModelFormatError::Kind::io, "cannot open model file: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_model(buffer.str());
}

std::string model_fingerprint(const EmbeddingModel& model) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", crc_of(serialize_model(model)));
  return buf;
}

}  // namespace crisisbot::embed
