#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crisisbot/common.hpp"

namespace crisisbot::corpus {

enum class Category { faq, chitchat };

std::string_view to_string(Category c);
std::optional<Category> parse_category(std::string_view s);

/// A bundle of question dialects that share one reply language, e.g. French
/// and Tunizi questions both answered in French.
struct LanguageGroup {
  std::string id;
  std::string reply_language;

  bool operator==(const LanguageGroup&) const = default;
};

/// Declaration of an external answer provider that intents may bind to.
struct ServiceSpec {
  std::string key;
  std::string endpoint;
  std::chrono::milliseconds timeout{3000};
  std::map<std::string, std::string> fallback_text;  // language group -> text

  bool operator==(const ServiceSpec&) const = default;
};

struct IntentEntry {
  std::string intent_id;
  Category category = Category::faq;
  std::string language_group;
  std::vector<std::string> questions;
  std::string answer;
  std::optional<std::string> external_service;

  bool operator==(const IntentEntry&) const = default;
};

struct LabeledExample {
  std::string text;
  std::string intent_id;

  bool operator==(const LabeledExample&) const = default;
};

/// Raised by catalog loading. `issues()` lists every problem found, one per
/// entry, so a bad file can be fixed in a single pass.
class CatalogError : public Error {
 public:
  explicit CatalogError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

/// Immutable, validated set of intents plus per-group fallback messages.
class IntentCatalog {
 public:
  /// Throws CatalogError listing every invariant violation.
  IntentCatalog(std::vector<LanguageGroup> groups, std::vector<IntentEntry> entries,
                std::map<std::string, std::string> fallbacks, std::vector<ServiceSpec> services = {});

  const std::vector<LanguageGroup>& language_groups() const { return groups_; }
  const std::vector<IntentEntry>& entries() const { return entries_; }
  const std::map<std::string, std::string>& fallback_messages() const { return fallbacks_; }
  const std::vector<ServiceSpec>& services() const { return services_; }

  const IntentEntry* find(std::string_view intent_id) const;
  const LanguageGroup* group(std::string_view id) const;
  const std::string* fallback_message(std::string_view group_id) const;

  bool operator==(const IntentCatalog&) const = default;

 private:
  std::vector<LanguageGroup> groups_;
  std::vector<IntentEntry> entries_;
  std::map<std::string, std::string> fallbacks_;
  std::vector<ServiceSpec> services_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// True when `id` matches `[a-z0-9_.-]+`.
bool is_valid_intent_id(std::string_view id);

IntentCatalog parse_catalog(std::string_view text);
IntentCatalog load_catalog(const std::filesystem::path& path);
std::string dump_catalog(const IntentCatalog& catalog);
void save_catalog(const IntentCatalog& catalog, const std::filesystem::path& path);

/// One example per (question, intent) pair, in catalog order.
std::vector<LabeledExample> flatten(const IntentCatalog& catalog);

inline constexpr double kDefaultValidationFraction = 0.2;

struct Split {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> validation;
};

/// Stratified, seeded train/validation split.
///
/// The validation size is round(n * fraction) (at least one), allocated
/// across intents by largest remainder. An intent never gives away its last
/// example, so intents with a single example always land in train. Both
/// halves keep the input order.
Split split(std::span<const LabeledExample> examples, double validation_fraction, std::uint64_t seed);

struct CategoryCounts {
  std::size_t faq = 0;
  std::size_t chitchat = 0;

  bool operator==(const CategoryCounts&) const = default;
};

/// Number of intents per language group and category.
std::map<std::string, CategoryCounts> content_statistics(const IntentCatalog& catalog);

}  // namespace crisisbot::corpus
