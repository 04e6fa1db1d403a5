#include <benchmark/benchmark.h>

#include "crisisbot/classifier.hpp"
#include "crisisbot/corpus.hpp"
#include "crisisbot/embednet.hpp"
#include "crisisbot/featurizer.hpp"

namespace {

using namespace crisisbot;

const std::vector<corpus::LabeledExample>& seed_examples() {
  static const auto examples =
      corpus::flatten(corpus::load_catalog(std::filesystem::path(CRISISBOT_SOURCE_DIR) / "data" / "seed_catalog.yaml"));
  return examples;
}

// Untrained weights are as fast to evaluate as trained ones.
const embed::EmbeddingModel& seed_model() {
  static const auto model = embed::init_model(features::build_vocabulary(seed_examples()), {});
  return model;
}

void BM_Normalize(benchmark::State& state) {
  const std::string text = "  Kifech NE7MI rou7i mel Corona ?  جيدًا ١٩ ";
  for (auto _ : state) benchmark::DoNotOptimize(features::normalize(text));
}
BENCHMARK(BM_Normalize);

void BM_CharNgrams(benchmark::State& state) {
  const std::string text(static_cast<std::size_t>(state.range(0)), 'a');
  for (auto _ : state) benchmark::DoNotOptimize(features::char_ngrams(text));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CharNgrams)->RangeMultiplier(4)->Range(16, 1024)->Complexity();

void BM_Featurize(benchmark::State& state) {
  const auto& model = seed_model();
  for (auto _ : state) benchmark::DoNotOptimize(features::featurize("how can i protect myself from corona?", model.vocab));
}
BENCHMARK(BM_Featurize);

void BM_EmbedInput(benchmark::State& state) {
  const auto& model = seed_model();
  const auto x = features::featurize("how can i protect myself from corona?", model.vocab);
  for (auto _ : state) benchmark::DoNotOptimize(embed::embed_input(model, x));
}
BENCHMARK(BM_EmbedInput);

void BM_Predict(benchmark::State& state) {
  const auto& model = seed_model();
  for (auto _ : state) benchmark::DoNotOptimize(classify::predict(model, "kifech ne7mi rou7i mel corona ?"));
}
BENCHMARK(BM_Predict);

void BM_LossWithGradients(benchmark::State& state) {
  const auto& model = seed_model();
  const auto encoded = embed::encode_examples(model, seed_examples());
  const std::vector<std::size_t> negatives = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  embed::Gradients grads;
  for (auto _ : state) benchmark::DoNotOptimize(embed::loss_with_gradients(model, encoded.front(), negatives, grads));
}
BENCHMARK(BM_LossWithGradients);

void BM_TrainEpoch(benchmark::State& state) {
  embed::Hyperparams hp;
  hp.epochs = 1;
  for (auto _ : state) {
    state.PauseTiming();
    auto model = embed::init_model(features::build_vocabulary(seed_examples()), hp);
    const auto encoded = embed::encode_examples(model, seed_examples());
    state.ResumeTiming();
    benchmark::DoNotOptimize(embed::train(model, encoded));
  }
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
