#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "crisisbot/embednet.hpp"
#include "crisisbot/random.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace crisisbot::embed {
namespace {

using features::SparseVector;
using features::Vocabulary;
using testing::oracle_embed;
using testing::oracle_loss;
using testing::TempDir;
using testing::tiny_vocab;

SparseVector sparse(std::size_t dim, std::vector<std::pair<std::uint32_t, double>> entries) {
  return {std::move(entries), dim};
}

TEST(InitModel, ShapesUnderDefaults) {
  const auto m = init_model(tiny_vocab(6, 2), {});
  EXPECT_EQ(m.gram_table.rows(), 6);
  EXPECT_EQ(m.gram_table.cols(), 128);
  EXPECT_EQ(m.label_table.rows(), 2);
  EXPECT_EQ(m.label_table.cols(), 20);
  EXPECT_EQ(m.w1.rows(), 128);
  EXPECT_EQ(m.w2.rows(), 20);
  EXPECT_EQ(m.w2.cols(), 128);
  EXPECT_TRUE(m.all_finite());
}

TEST(InitModel, DeterministicPerSeed) {
  Hyperparams a, b;
  a.rng_seed = 1;
  b.rng_seed = 2;
  EXPECT_EQ(serialize_model(init_model(tiny_vocab(6, 2), a)), serialize_model(init_model(tiny_vocab(6, 2), a)));
  EXPECT_FALSE(init_model(tiny_vocab(6, 2), a) == init_model(tiny_vocab(6, 2), b));
}

TEST(InitModel, WeightsWithinFanInBound) {
  const auto m = init_model(tiny_vocab(30, 4), {});
  const double hidden_bound = 1.0 / std::sqrt(128.0);
  EXPECT_LE(m.gram_table.cwiseAbs().maxCoeff(), hidden_bound);
  EXPECT_LE(m.w1.cwiseAbs().maxCoeff(), hidden_bound);
  EXPECT_LE(m.w2.cwiseAbs().maxCoeff(), hidden_bound);
  EXPECT_LE(m.label_table.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(20.0));
}

TEST(InitModel, RejectsEmptyVocabulary) {
  EXPECT_THROW(init_model(tiny_vocab(0, 2), {}), Error);
}

TEST(Hyperparams, Validation) {
  Hyperparams hp;
  EXPECT_NO_THROW(hp.validate());
  hp.margin_neg = 0.9;
  EXPECT_THROW(hp.validate(), Error);
  hp = {};
  hp.negatives_per_example = 0;
  EXPECT_THROW(hp.validate(), Error);
  hp = {};
  hp.learning_rate = 0;
  EXPECT_THROW(hp.validate(), Error);
  hp = {};
  hp.dim_embed = 0;
  EXPECT_THROW(hp.validate(), Error);
}

TEST(EmbedInput, OutputLengthAndBiasPath) {
  const auto m = init_model(tiny_vocab(10, 3), {});
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    SparseVector x = sparse(10, {});
    for (std::uint32_t j = 0; j < 10; ++j) {
      if (rng.index(2)) x.entries.emplace_back(j, 1.0 + static_cast<double>(rng.index(3)));
    }
    EXPECT_EQ(embed_input(m, x).size(), 20);
  }
  const Vector empty = embed_input(m, sparse(10, {}));
  const Vector bias_path = m.w2 * m.b1.cwiseMax(0.0) + m.b2;
  EXPECT_EQ(empty, bias_path);
}

TEST(EmbedInput, MatchesOracle) {
  const auto m = init_model(tiny_vocab(10, 3), {});
  const auto x = sparse(10, {{1, 2.0}, {4, 1.0}, {9, 3.0}});
  const auto oracle = oracle_embed(m, x);
  const Vector out = embed_input(m, x);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(out(i), oracle[i], 1e-12);
}

TEST(EmbedInput, DoublingCountsDoublesH0) {
  Hyperparams hp;
  hp.dim_hidden = 8;
  hp.dim_embed = 4;
  auto m = init_model(tiny_vocab(10, 3), hp);
  // With W1 = I, b1 = 0, W2 = [I 0], b2 = 0 the output exposes relu(h0) directly.
  m.w1.setIdentity();
  m.b1.setZero();
  m.w2.setZero();
  m.b2.setZero();
  for (int i = 0; i < 4; ++i) m.w2(i, i) = 1.0;
  m.gram_table = m.gram_table.cwiseAbs();
  const auto x = sparse(10, {{0, 1.0}, {3, 2.0}});
  const auto x2 = sparse(10, {{0, 2.0}, {3, 4.0}});
  EXPECT_TRUE(embed_input(m, x2).isApprox(2.0 * embed_input(m, x), 1e-14));
}

TEST(EmbedInput, DimensionMismatch) {
  const auto m = init_model(tiny_vocab(10, 3), {});
  EXPECT_THROW(embed_input(m, sparse(11, {})), Error);
}

TEST(EmbedLabel, RowsAndRange) {
  const auto m = init_model(tiny_vocab(10, 3), {});
  EXPECT_EQ(embed_label(m, 0), Vector(m.label_table.row(0).transpose()));
  EXPECT_EQ(embed_label(m, 2), Vector(m.label_table.row(2).transpose()));
  EXPECT_THROW(embed_label(m, 3), Error);
}

TEST(Cosine, Examples) {
  Vector v(3);
  v << 1.0, -2.0, 0.5;
  EXPECT_DOUBLE_EQ(cosine(v, v), 1.0);
  EXPECT_DOUBLE_EQ(cosine(v, Vector(-v)), -1.0);
  Vector e1(2), e2(2);
  e1 << 1, 0;
  e2 << 0, 1;
  EXPECT_EQ(cosine(e1, e2), 0.0);
  EXPECT_EQ(cosine(Vector::Zero(3), v), 0.0);
  EXPECT_THROW(cosine(e1, v), Error);
}

TEST(Cosine, RangeSymmetryAndScaleInvariance) {
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    Vector a(7), b(7);
    for (int k = 0; k < 7; ++k) {
      a(k) = rng.uniform(-3, 3);
      b(k) = rng.uniform(-3, 3);
    }
    const double c = cosine(a, b);
    ASSERT_GE(c, -1.0);
    ASSERT_LE(c, 1.0);
    ASSERT_EQ(c, cosine(b, a));
    const double alpha = rng.uniform(0.01, 100.0);
    ASSERT_NEAR(cosine(Vector(alpha * a), b), c, 1e-12);
    ASSERT_NEAR(cosine(std::span<const double>(a.data(), 7), std::span<const double>(b.data(), 7)), c, 1e-15);
  }
}

// A two-dimensional model whose input embedding is exactly (1, 0).
EmbeddingModel unit_model() {
  Hyperparams hp;
  hp.dim_hidden = 2;
  hp.dim_embed = 2;
  auto m = init_model(tiny_vocab(1, 2), hp);
  m.gram_table << 1.0, 0.0;
  m.w1.setIdentity();
  m.b1.setZero();
  m.w2.setIdentity();
  m.b2.setZero();
  return m;
}

TEST(Loss, ZeroWhenPositiveMatchesAndNegativesAreFar) {
  auto m = unit_model();
  m.label_table << 1.0, 0.0, -1.0, 0.0;
  const EncodedExample ex{sparse(1, {{0, 1.0}}), 0};
  const std::vector<std::size_t> negs = {1};
  EXPECT_DOUBLE_EQ(loss(m, ex, negs), 0.0);
}

TEST(Loss, OrthogonalPositiveAndNegative) {
  auto m = unit_model();
  m.label_table << 0.0, 1.0, 0.0, -1.0;
  const EncodedExample ex{sparse(1, {{0, 1.0}}), 0};
  const std::vector<std::size_t> negs = {1};
  EXPECT_NEAR(loss(m, ex, negs), 1.2, 1e-15);
}

TEST(Loss, RejectsBadNegatives) {
  const auto m = init_model(tiny_vocab(10, 3), {});
  const EncodedExample ex{sparse(10, {{0, 1.0}}), 1};
  EXPECT_THROW(loss(m, ex, std::vector<std::size_t>{}), Error);
  EXPECT_THROW(loss(m, ex, std::vector<std::size_t>{0, 1}), Error);
  EXPECT_THROW(loss(m, ex, std::vector<std::size_t>{7}), Error);
}

TEST(Loss, MatchesOracleAndIsNonNegative) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    Hyperparams hp;
    hp.dim_hidden = 8;
    hp.dim_embed = 5;
    hp.rng_seed = rng.next();
    const auto m = init_model(tiny_vocab(10, 4), hp);
    SparseVector x = sparse(10, {});
    for (std::uint32_t j = 0; j < 10; ++j) {
      if (rng.index(3) == 0) x.entries.emplace_back(j, 1.0 + static_cast<double>(rng.index(4)));
    }
    const EncodedExample ex{x, rng.index(4)};
    std::vector<std::size_t> negs;
    for (std::size_t k = 0; k < 4; ++k) {
      if (k != ex.label) negs.push_back(k);
    }
    const double l = loss(m, ex, negs);
    ASSERT_GE(l, 0.0);
    ASSERT_NEAR(l, oracle_loss(m, ex, negs), 1e-12);
    Gradients g;
    ASSERT_NEAR(loss_with_gradients(m, ex, negs, g), l, 1e-12);
  }
}

TEST(Gradients, MatchCentralFiniteDifferencesOnTinyModel) {
  EXPECT_LT(testing::worst_tiny_gradient_error(2718, 20), 1e-3);
}

TEST(Gradients, AgreeAcrossGroupsAtOneFixedPoint) {
  Hyperparams hp;
  hp.dim_hidden = 8;
  hp.dim_embed = 4;
  hp.rng_seed = 11;
  auto m = init_model(tiny_vocab(10, 3), hp);
  m.label_table *= 3.0;
  const EncodedExample ex{sparse(10, {{0, 1.0}, {2, 2.0}, {7, 1.0}}), 1};
  const std::vector<std::size_t> negs = {0, 2};
  ASSERT_TRUE(testing::away_from_kinks(m, ex, negs, 1e-4));
  const auto r = testing::gradient_check(m, ex, negs, 1e-4);
  EXPECT_LT(r.max(), 1e-3) << "gram " << r.gram << " w1 " << r.w1 << " b1 " << r.b1 << " w2 " << r.w2 << " b2 "
                           << r.b2 << " labels " << r.labels;
}

std::vector<corpus::LabeledExample> toy_corpus() {
  return {{"hello there", "greet"},   {"hi there", "greet"},          {"hey hello", "greet"},
          {"bye now", "leave"},       {"goodbye", "leave"},           {"see you bye", "leave"},
          {"thanks a lot", "thank"},  {"thank you", "thank"},         {"many thanks", "thank"},
          {"covid symptoms", "sympt"}, {"symptoms of corona", "sympt"}, {"signs of covid", "sympt"}};
}

EmbeddingModel toy_model(int epochs, std::uint64_t seed = 42) {
  Hyperparams hp;
  hp.epochs = epochs;
  hp.rng_seed = seed;
  const auto data = toy_corpus();
  return init_model(features::build_vocabulary(data), hp);
}

TEST(Train, ReducesLossAndSeparatesToyCorpus) {
  auto m = toy_model(60);
  const auto data = toy_corpus();
  const auto encoded = encode_examples(m, data);
  const auto report = train(m, encoded);
  ASSERT_EQ(report.loss_per_epoch.size(), 60u);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += report.loss_per_epoch[i];
    last += report.loss_per_epoch[50 + i];
  }
  EXPECT_LT(last, first);
  EXPECT_DOUBLE_EQ(report.final_train_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(train_accuracy(m, encoded), 1.0);
}

TEST(Train, BitIdenticalForSameSeed) {
  const auto data = toy_corpus();
  auto a = toy_model(20), b = toy_model(20);
  const auto ra = train(a, encode_examples(a, data));
  const auto rb = train(b, encode_examples(b, data));
  EXPECT_EQ(ra.loss_per_epoch, rb.loss_per_epoch);
  EXPECT_EQ(serialize_model(a), serialize_model(b));

  auto c = toy_model(20, 7);
  train(c, encode_examples(c, data));
  EXPECT_NE(serialize_model(a), serialize_model(c));
}

TEST(Train, NeedsTwoIntents) {
  const std::vector<corpus::LabeledExample> data = {{"hello", "greet"}, {"hi", "greet"}};
  auto m = init_model(features::build_vocabulary(data), {});
  EXPECT_THROW(train(m, encode_examples(m, data)), Error);
}

TEST(Train, AbortsOnNonFiniteLoss) {
  auto m = toy_model(50);
  m.hp.learning_rate = 1e300;
  const auto data = toy_corpus();
  EXPECT_THROW(train(m, encode_examples(m, data)), Error);
}

TEST(ModelFile, RoundTripIsBitExact) {
  TempDir dir;
  auto m = toy_model(5);
  m.split = SplitInfo{0.25, 9};
  train(m, encode_examples(m, toy_corpus()));
  save_model(m, dir / "m.bin");
  const auto loaded = load_model(dir / "m.bin");
  EXPECT_TRUE(loaded == m);
  EXPECT_EQ(serialize_model(loaded), serialize_model(m));
  EXPECT_EQ(model_fingerprint(loaded), model_fingerprint(m));
  EXPECT_EQ(loaded.vocab.grams(), m.vocab.grams());
  EXPECT_EQ(loaded.split, m.split);
}

ModelFormatError::Kind load_error_kind(std::string_view bytes) {
  try {
    deserialize_model(bytes);
  } catch (const ModelFormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected ModelFormatError";
  return ModelFormatError::Kind::io;
}

TEST(ModelFile, TruncatedFileFailsChecksum) {
  const auto bytes = serialize_model(toy_model(1));
  EXPECT_EQ(load_error_kind(std::string_view(bytes).substr(0, bytes.size() - 9)), ModelFormatError::Kind::checksum);
  EXPECT_EQ(load_error_kind(std::string_view(bytes).substr(0, 40)), ModelFormatError::Kind::checksum);
}

TEST(ModelFile, FlippedByteFailsChecksum) {
  auto bytes = serialize_model(toy_model(1));
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_EQ(load_error_kind(bytes), ModelFormatError::Kind::checksum);
}

TEST(ModelFile, UnknownVersionIsReportedAsSuch) {
  auto bytes = serialize_model(toy_model(1));
  const std::uint32_t v = 999;
  std::memcpy(bytes.data() + 8, &v, sizeof v);
  EXPECT_EQ(load_error_kind(bytes), ModelFormatError::Kind::version);
}

TEST(ModelFile, WrongMagicIsAFormatError) {
  EXPECT_EQ(load_error_kind("not a model at all"), ModelFormatError::Kind::format);
}

TEST(ModelFile, MissingFileIsAnIoError) {
  try {
    load_model("/nonexistent/model.bin");
    FAIL();
  } catch (const ModelFormatError& e) {
    EXPECT_EQ(e.kind(), ModelFormatError::Kind::io);
  }
}

}  // namespace
}  // namespace crisisbot::embed
