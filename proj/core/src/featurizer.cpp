#include "crisisbot/featurizer.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <stdexcept>

namespace crisisbot::features {

namespace {

constexpr char32_t kReplacement = 0xFFFD;

bool is_arabic_diacritic(UChar32 c) {
  return (c >= 0x064B && c <= 0x065F) || c == 0x0670;
}

std::optional<char> arabic_digit(UChar32 c) {
  if (c >= 0x0660 && c <= 0x0669) return static_cast<char>('0' + (c - 0x0660));
  if (c >= 0x06F0 && c <= 0x06F9) return static_cast<char>('0' + (c - 0x06F0));
  return std::nullopt;
}

bool is_space(UChar32 c) {
  return u_isUWhiteSpace(c) || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

const icu::Normalizer2& nfc() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || n == nullptr) {
    throw Error(std::string("ICU NFC normalizer unavailable: ") + u_errorName(status));
  }
  return *n;
}

icu::UnicodeString to_nfc(const icu::UnicodeString& s) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString out = nfc().normalize(s, status);
  if (U_FAILURE(status)) throw Error(std::string("NFC normalization failed: ") + u_errorName(status));
  return out;
}

void append_utf8(std::string& out, char32_t c) {
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
}

}  // namespace

std::u32string to_scalars(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t c = 0;
    char32_t min = 0;
    if (b0 < 0x80) {
      out.push_back(b0);
      ++i;
      continue;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2, c = b0 & 0x1F, min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3, c = b0 & 0x0F, min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4, c = b0 & 0x07, min = 0x10000;
    } else {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    bool ok = i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
      } else {
        c = (c << 6) | (b & 0x3F);
      }
    }
    if (!ok || c < min || c > 0x10FFFF || (c >= 0xD800 && c <= 0xDFFF)) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    out.push_back(c);
    i += len;
  }
  return out;
}

std::string to_utf8(std::u32string_view scalars) {
  std::string out;
  out.reserve(scalars.size());
  for (char32_t c : scalars) append_utf8(out, c);
  return out;
}

std::size_t scalar_length(std::string_view utf8) { return to_scalars(utf8).size(); }

std::string normalize(std::string_view text, const NormalizeOptions& options) {
  if (text.empty()) return {};

  const icu::UnicodeString composed =
      to_nfc(icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size()))));

  icu::UnicodeString mapped;
  for (int32_t i = 0; i < composed.length();) {
    const UChar32 c = composed.char32At(i);
    i += U16_LENGTH(c);
    if (is_space(c)) {
      mapped.append(static_cast<UChar32>(' '));
    } else if (u_charType(c) == U_CONTROL_CHAR) {
      continue;
    } else if (options.strip_arabic_diacritics && is_arabic_diacritic(c)) {
      continue;
    } else if (auto digit = options.fold_arabic_digits ? arabic_digit(c) : std::nullopt) {
      mapped.append(static_cast<UChar32>(*digit));
    } else {
      mapped.append(c);
    }
  }
  mapped.toLower(icu::Locale::getRoot());
  const icu::UnicodeString recomposed = to_nfc(mapped);

  std::string utf8;
  recomposed.toUTF8String(utf8);

  std::string out;
  out.reserve(utf8.size());
  bool pending_space = false;
  for (char ch : utf8) {
    if (ch == ' ') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(ch);
  }
  return out;
}

FeatureBag char_ngrams(std::string_view text, NgramRange range) {
  if (range.n_min < 1 || range.n_min > range.n_max) {
    throw Error("invalid n-gram range [" + std::to_string(range.n_min) + ", " +
                std::to_string(range.n_max) + "]");
  }
  const std::u32string scalars = to_scalars(text);

  // Re-encode once and slice by byte offsets so malformed input still yields
  // valid UTF-8 grams.
  std::string utf8;
  std::vector<std::size_t> offsets;
  offsets.reserve(scalars.size() + 1);
  for (char32_t c : scalars) {
    offsets.push_back(utf8.size());
    append_utf8(utf8, c);
  }
  offsets.push_back(utf8.size());

  FeatureBag bag;
  const auto m = static_cast<int>(scalars.size());
  for (int n = range.n_min; n <= range.n_max; ++n) {
    for (int start = 0; start + n <= m; ++start) {
      const std::size_t b = offsets[start];
      const std::size_t e = offsets[start + n];
      ++bag[utf8.substr(b, e - b)];
    }
  }
  return bag;
}

std::size_t bag_mass(const FeatureBag& bag) {
  std::size_t total = 0;
  for (const auto& [gram, count] : bag) total += count;
  return total;
}

Vocabulary::Vocabulary(std::vector<std::string> grams, std::vector<std::string> tags, NgramRange range,
                       NormalizeOptions normalize_options)
    : grams_(std::move(grams)), tags_(std::move(tags)), range_(range), normalize_(normalize_options) {
  gram_lookup_.reserve(grams_.size());
  for (std::size_t i = 0; i < grams_.size(); ++i) {
    if (!gram_lookup_.emplace(grams_[i], i).second) throw Error("duplicate gram in vocabulary: " + grams_[i]);
  }
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    if (!tag_lookup_.emplace(tags_[i], i).second) throw Error("duplicate tag in vocabulary: " + tags_[i]);
  }
}

std::optional<std::size_t> Vocabulary::gram_index(std::string_view gram) const {
  auto it = gram_lookup_.find(std::string(gram));
  if (it == gram_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Vocabulary::tag_index(std::string_view tag) const {
  auto it = tag_lookup_.find(std::string(tag));
  if (it == tag_lookup_.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocabulary(std::span<const corpus::LabeledExample> train, int min_count, NgramRange range,
                            const NormalizeOptions& options) {
  if (train.empty()) throw Error("cannot build a vocabulary from an empty training set");
  if (range.n_min < 1 || range.n_min > range.n_max) throw Error("invalid n-gram range");

  std::map<std::string, std::size_t> counts;
  std::vector<std::string> tags;
  std::unordered_map<std::string, bool> seen_tags;
  for (const auto& example : train) {
    for (const auto& [gram, count] : char_ngrams(normalize(example.text, options), range)) {
      counts[gram] += count;
    }
    if (seen_tags.emplace(example.intent_id, true).second) tags.push_back(example.intent_id);
  }

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [gram, count] : counts) {
    if (count >= static_cast<std::size_t>(std::max(min_count, 1))) kept.emplace_back(gram, count);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> grams;
  grams.reserve(kept.size());
  for (auto& [gram, count] : kept) grams.push_back(std::move(gram));
  return Vocabulary(std::move(grams), std::move(tags), range, options);
}

SparseVector encode(const FeatureBag& bag, const Vocabulary& vocab) {
  if (vocab.num_grams() == 0) throw Error("cannot encode against a vocabulary with no grams");
  SparseVector out;
  out.dimension = vocab.num_grams();
  out.entries.reserve(bag.size());
  for (const auto& [gram, count] : bag) {
    if (auto idx = vocab.gram_index(gram)) {
      out.entries.emplace_back(static_cast<std::uint32_t>(*idx), static_cast<double>(count));
    }
  }
  std::sort(out.entries.begin(), out.entries.end());
  return out;
}

SparseVector featurize(std::string_view raw_text, const Vocabulary& vocab) {
  return encode(char_ngrams(normalize(raw_text, vocab.normalize_options()), vocab.range()), vocab);
}

}  // namespace crisisbot::features
