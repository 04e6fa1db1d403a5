#include <gtest/gtest.h>

#include "crisisbot/featurizer.hpp"
#include "crisisbot/random.hpp"
#include "oracles.hpp"

namespace crisisbot::features {
namespace {

using testing::append_utf8;
using testing::count_scalars;
using testing::random_text;

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize("  3assLAMA  "), "3asslama");
  EXPECT_EQ(normalize(""), "");
  EXPECT_EQ(normalize("How\t R\nU"), "how r u");
  EXPECT_EQ(normalize("CAFÉ"), "café");  // NFC composes e + acute
  EXPECT_EQ(normalize("a\x01" "b"), "ab");
}

TEST(Normalize, ArabicOptions) {
  // Harakat are stripped and Arabic-Indic digits folded by default.
  EXPECT_EQ(normalize("جيدًا ١٩"), "جيدا 19");
  NormalizeOptions keep{false, false};
  EXPECT_EQ(normalize("جيدًا ١٩", keep), "جيدًا ١٩");
}

TEST(Normalize, InvalidUtf8BecomesReplacementCharacter) {
  EXPECT_EQ(normalize("a\xFF" "b"), "a\xEF\xBF\xBD" "b");
}

TEST(Normalize, IdempotentOnRandomUnicode) {
  Rng rng(77);
  for (int i = 0; i < 2000; ++i) {
    const auto s = random_text(rng, 40);
    const auto once = normalize(s);
    ASSERT_EQ(normalize(once), once) << "input #" << i;
    ASSERT_EQ(once.find("  "), std::string::npos);
    if (!once.empty()) {
      ASSERT_NE(once.front(), ' ');
      ASSERT_NE(once.back(), ' ');
    }
    for (unsigned char c : once) ASSERT_FALSE(c < 0x20 || c == 0x7F) << "control byte in output #" << i;
  }
}

TEST(CharNgrams, Behi) {
  const auto bag = char_ngrams("behi");
  const FeatureBag expected = {{"be", 1}, {"eh", 1}, {"hi", 1}, {"beh", 1}, {"ehi", 1}, {"behi", 1}};
  EXPECT_EQ(bag, expected);
  EXPECT_EQ(bag_mass(bag), 6u);
}

TEST(CharNgrams, TooShortAndMultiplicity) {
  EXPECT_TRUE(char_ngrams("a").empty());
  EXPECT_EQ(char_ngrams("aaa", {2, 2}), (FeatureBag{{"aa", 2}}));
}

TEST(CharNgrams, WhitespaceParticipates) {
  const auto bag = char_ngrams("a b", {2, 3});
  EXPECT_EQ(bag, (FeatureBag{{"a ", 1}, {" b", 1}, {"a b", 1}}));
}

TEST(CharNgrams, ArabicCountsScalarsNotBytes) {
  const auto bag = char_ngrams("كيف", {2, 4});
  EXPECT_EQ(bag.size(), 3u);
  EXPECT_EQ(bag.count("كي"), 1u);
  EXPECT_EQ(bag.count("كيف"), 1u);
}

TEST(CharNgrams, InvalidRange) {
  EXPECT_THROW(char_ngrams("abc", {0, 2}), Error);
  EXPECT_THROW(char_ngrams("abc", {3, 2}), Error);
}

TEST(CharNgrams, CountLawOnRandomUnicode) { EXPECT_EQ(testing::count_law_violations(1000, 1000), 0); }

corpus::LabeledExample ex(std::string text, std::string intent) { return {std::move(text), std::move(intent)}; }

TEST(Vocabulary, BuiltFromBehi) {
  const std::vector<corpus::LabeledExample> train = {ex("behi", "good")};
  const auto v = build_vocabulary(train);
  EXPECT_EQ(v.num_grams(), 6u);
  EXPECT_EQ(v.num_tags(), 1u);
}

TEST(Vocabulary, TagsInFirstAppearanceOrder) {
  const std::vector<corpus::LabeledExample> train = {ex("hello", "greet"), ex("bye", "leave"), ex("hi", "greet")};
  const auto v = build_vocabulary(train);
  EXPECT_EQ(v.tags(), (std::vector<std::string>{"greet", "leave"}));
  EXPECT_EQ(v.tag_index("leave"), 1u);
  EXPECT_FALSE(v.tag_index("unknown").has_value());
}

TEST(Vocabulary, OrderedByCountThenBytes) {
  const std::vector<corpus::LabeledExample> train = {ex("abab", "x")};
  const auto v = build_vocabulary(train, 1, {2, 2});
  // ab x2, then ba x1.
  EXPECT_EQ(v.grams(), (std::vector<std::string>{"ab", "ba"}));
}

TEST(Vocabulary, GramsComeFromNormalizedText) {
  const std::vector<corpus::LabeledExample> train = {ex("  AB ", "x")};
  const auto v = build_vocabulary(train, 1, {2, 2});
  EXPECT_EQ(v.grams(), (std::vector<std::string>{"ab"}));
}

TEST(Vocabulary, MinCountCanEmptyTheGramsAndEncodeRejectsIt) {
  const std::vector<corpus::LabeledExample> train = {ex("behi", "good")};
  const auto v = build_vocabulary(train, 2);
  EXPECT_EQ(v.num_grams(), 0u);
  EXPECT_THROW(encode(char_ngrams("behi"), v), Error);
}

TEST(Vocabulary, EmptyTrainingSet) {
  EXPECT_THROW(build_vocabulary({}), Error);
}

TEST(Vocabulary, Deterministic) {
  const std::vector<corpus::LabeledExample> train = {ex("kifech ne7mi rou7i", "a"), ex("comment se proteger", "b")};
  EXPECT_EQ(build_vocabulary(train), build_vocabulary(train));
  EXPECT_EQ(build_vocabulary(train).grams(), build_vocabulary(train).grams());
}

TEST(Encode, DropsOutOfVocabularyGrams) {
  const Vocabulary v({"be"}, {"t"}, {2, 2}, {});
  const auto x = encode(FeatureBag{{"be", 1}, {"zz", 1}}, v);
  EXPECT_EQ(x.dimension, 1u);
  ASSERT_EQ(x.entries.size(), 1u);
  EXPECT_EQ(x.entries[0], (std::pair<std::uint32_t, double>{0, 1.0}));
}

TEST(Encode, EmptyBag) {
  const Vocabulary v({"be", "eh"}, {"t"}, {2, 2}, {});
  const auto x = encode({}, v);
  EXPECT_TRUE(x.entries.empty());
  EXPECT_EQ(x.dimension, 2u);
}

TEST(Encode, BehiAgainstItsOwnVocabulary) {
  const std::vector<corpus::LabeledExample> train = {ex("behi", "good")};
  const auto v = build_vocabulary(train);
  const auto x = encode(char_ngrams("behi"), v);
  ASSERT_EQ(x.entries.size(), 6u);
  for (std::size_t i = 0; i < x.entries.size(); ++i) {
    EXPECT_EQ(x.entries[i].second, 1.0);
    if (i > 0) EXPECT_LT(x.entries[i - 1].first, x.entries[i].first);
  }
}

TEST(Encode, AddingAnOccurrenceNeverLowersACoordinate) {
  Rng rng(8);
  const std::vector<corpus::LabeledExample> train = {ex("kifech ne7mi rou7i mel corona", "a"),
                                                     ex("how to protect myself", "b")};
  const auto v = build_vocabulary(train);
  for (int i = 0; i < 200; ++i) {
    FeatureBag bag;
    for (int k = 0; k < 5; ++k) bag[v.grams()[rng.index(v.num_grams())]] += 1;
    const auto before = encode(bag, v);
    bag[v.grams()[rng.index(v.num_grams())]] += 1;
    const auto after = encode(bag, v);
    for (const auto& [idx, value] : before.entries) {
      const auto it = std::find_if(after.entries.begin(), after.entries.end(),
                                   [&](const auto& e) { return e.first == idx; });
      ASSERT_NE(it, after.entries.end());
      ASSERT_GE(it->second, value);
    }
  }
}

TEST(Featurize, NormalizesFirst) {
  const std::vector<corpus::LabeledExample> train = {ex("3asslama", "hello")};
  const auto v = build_vocabulary(train);
  EXPECT_EQ(featurize("  3assLAMA ", v), featurize("3asslama", v));
}

}  // namespace
}  // namespace crisisbot::features
