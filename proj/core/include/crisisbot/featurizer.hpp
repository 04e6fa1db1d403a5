#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crisisbot/common.hpp"
#include "crisisbot/corpus.hpp"

namespace crisisbot::features {

struct NormalizeOptions {
  bool strip_arabic_diacritics = true;
  bool fold_arabic_digits = true;

  bool operator==(const NormalizeOptions&) const = default;
};

/// Cleans an utterance: NFC, lowercase, whitespace runs collapsed to a single
/// space and trimmed, control characters dropped. Optionally strips Arabic
/// harakat and maps Arabic-Indic digits to ASCII. Idempotent. Invalid UTF-8
/// sequences become U+FFFD.
std::string normalize(std::string_view text, const NormalizeOptions& options = {});

/// UTF-8 to Unicode scalar values; malformed sequences decode to U+FFFD.
std::u32string to_scalars(std::string_view utf8);
std::string to_utf8(std::u32string_view scalars);
std::size_t scalar_length(std::string_view utf8);

struct NgramRange {
  int n_min = 2;
  int n_max = 4;

  bool operator==(const NgramRange&) const = default;
};

/// n-gram -> occurrence count. Ordered so that iteration is deterministic.
using FeatureBag = std::map<std::string, std::uint32_t>;

/// Every contiguous run of n scalar values for n in [n_min, n_max], counted
/// with multiplicity. Whitespace is part of the grams.
FeatureBag char_ngrams(std::string_view text, NgramRange range = {});

std::size_t bag_mass(const FeatureBag& bag);

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> grams, std::vector<std::string> tags, NgramRange range,
             NormalizeOptions normalize_options);

  std::size_t num_grams() const { return grams_.size(); }
  std::size_t num_tags() const { return tags_.size(); }

  std::optional<std::size_t> gram_index(std::string_view gram) const;
  std::optional<std::size_t> tag_index(std::string_view tag) const;

  const std::vector<std::string>& grams() const { return grams_; }
  const std::vector<std::string>& tags() const { return tags_; }
  NgramRange range() const { return range_; }
  const NormalizeOptions& normalize_options() const { return normalize_; }

  bool operator==(const Vocabulary& other) const {
    return grams_ == other.grams_ && tags_ == other.tags_ && range_ == other.range_ &&
           normalize_ == other.normalize_;
  }

 private:
  std::vector<std::string> grams_;
  std::vector<std::string> tags_;
  NgramRange range_;
  NormalizeOptions normalize_;
  std::unordered_map<std::string, std::size_t> gram_lookup_;
  std::unordered_map<std::string, std::size_t> tag_lookup_;
};

/// Grams with count >= min_count across the training set, ordered by count
/// descending then bytewise. Tags in first-appearance order. Throws Error on
/// an empty training set or invalid range.
Vocabulary build_vocabulary(std::span<const corpus::LabeledExample> train, int min_count = 1,
                            NgramRange range = {}, const NormalizeOptions& options = {});

struct SparseVector {
  std::vector<std::pair<std::uint32_t, double>> entries;  // strictly increasing index
  std::size_t dimension = 0;

  bool operator==(const SparseVector&) const = default;
};

/// Out-of-vocabulary grams are dropped. Throws Error when the vocabulary has
/// no grams.
SparseVector encode(const FeatureBag& bag, const Vocabulary& vocab);

/// normalize -> char_ngrams -> encode, using the vocabulary's settings.
SparseVector featurize(std::string_view raw_text, const Vocabulary& vocab);

}  // namespace crisisbot::features
