#include "crisisbot/corpus.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "crisisbot/featurizer.hpp"
#include "crisisbot/random.hpp"

namespace crisisbot::corpus {

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
  std::string msg = "invalid intent catalog";
  for (const auto& issue : issues) msg += "\n  - " + issue;
  return msg;
}

std::string where(const YAML::Node& node) {
  const YAML::Mark mark = node.Mark();
  if (mark.is_null()) return "";
  return " (line " + std::to_string(mark.line + 1) + ", column " + std::to_string(mark.column + 1) + ")";
}

// Schema reader that records problems instead of throwing on the first one.
class Reader {
 public:
  std::vector<std::string> issues;

  std::optional<std::string> scalar(const YAML::Node& parent, const char* key, const std::string& ctx,
                                    bool required = true) {
    const YAML::Node node = parent[key];
    if (!node) {
      if (required) issues.push_back(ctx + ": missing key '" + key + "'" + where(parent));
      return std::nullopt;
    }
    if (!node.IsScalar()) {
      issues.push_back(ctx + ": '" + key + "' must be a string" + where(node));
      return std::nullopt;
    }
    return node.Scalar();
  }
};

}  // namespace

std::string_view to_string(Category c) { return c == Category::faq ? "faq" : "chitchat"; }

std::optional<Category> parse_category(std::string_view s) {
  if (s == "faq") return Category::faq;
  if (s == "chitchat") return Category::chitchat;
  return std::nullopt;
}

CatalogError::CatalogError(std::vector<std::string> issues)
    : Error(join_issues(issues)), issues_(std::move(issues)) {}

bool is_valid_intent_id(std::string_view id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.' || c == '-';
  });
}

namespace {

std::vector<std::string> catalog_issues(const std::vector<LanguageGroup>& groups, const std::vector<IntentEntry>& entries,
                                        const std::map<std::string, std::string>& fallbacks,
                                        const std::vector<ServiceSpec>& services) {
  std::vector<std::string> issues;

  std::set<std::string, std::less<>> group_ids;
  for (const auto& g : groups) {
    if (g.id.empty()) issues.push_back("language group with empty id");
    if (g.reply_language.empty()) issues.push_back("language group \"" + g.id + "\": empty reply_language");
    if (!group_ids.insert(g.id).second) issues.push_back("language group \"" + g.id + "\": duplicate id");
  }

  std::set<std::string, std::less<>> service_keys;
  for (const auto& s : services) {
    if (!service_keys.insert(s.key).second) issues.push_back("external service \"" + s.key + "\": duplicate key");
    if (s.endpoint.empty()) issues.push_back("external service \"" + s.key + "\": empty endpoint");
    if (s.timeout.count() <= 0) issues.push_back("external service \"" + s.key + "\": timeout must be positive");
  }

  std::map<std::string, int, std::less<>> id_counts;
  for (const auto& e : entries) ++id_counts[e.intent_id];

  std::set<std::string, std::less<>> referenced_groups;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string ctx = "intents[" + std::to_string(i) + "] \"" + e.intent_id + "\"";
    if (!is_valid_intent_id(e.intent_id)) issues.push_back(ctx + ": intent_id must match [a-z0-9_.-]+");
    if (id_counts[e.intent_id] > 1) issues.push_back(ctx + ": duplicate intent_id");
    if (!group_ids.contains(e.language_group)) {
      issues.push_back(ctx + ": unknown language_group \"" + e.language_group + "\"");
    } else {
      referenced_groups.insert(e.language_group);
    }
    if (e.questions.empty()) issues.push_back(ctx + ": questions must not be empty");
    for (std::size_t q = 0; q < e.questions.size(); ++q) {
      if (features::normalize(e.questions[q]).empty()) {
        issues.push_back(ctx + ": question " + std::to_string(q) + " is empty after normalization");
      }
    }
    if (e.answer.empty()) issues.push_back(ctx + ": answer must not be empty");
    if (e.external_service && !service_keys.contains(*e.external_service)) {
      issues.push_back(ctx + ": external_service \"" + *e.external_service + "\" is not declared");
    }
  }

  for (const auto& g : referenced_groups) {
    auto it = fallbacks.find(g);
    if (it == fallbacks.end() || it->second.empty()) {
      issues.push_back("language group \"" + g + "\" has no fallback message");
    }
  }
  if (id_counts.size() < 2) issues.push_back("catalog must define at least 2 distinct intents");

  return issues;
}

}  // namespace

IntentCatalog::IntentCatalog(std::vector<LanguageGroup> groups, std::vector<IntentEntry> entries,
                             std::map<std::string, std::string> fallbacks, std::vector<ServiceSpec> services)
    : groups_(std::move(groups)),
      entries_(std::move(entries)),
      fallbacks_(std::move(fallbacks)),
      services_(std::move(services)) {
  auto issues = catalog_issues(groups_, entries_, fallbacks_, services_);
  if (!issues.empty()) throw CatalogError(std::move(issues));

  for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].intent_id, i);
}

const IntentEntry* IntentCatalog::find(std::string_view intent_id) const {
  auto it = index_.find(intent_id);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const LanguageGroup* IntentCatalog::group(std::string_view id) const {
  for (const auto& g : groups_) {
    if (g.id == id) return &g;
  }
  return nullptr;
}

const std::string* IntentCatalog::fallback_message(std::string_view group_id) const {
  auto it = fallbacks_.find(std::string(group_id));
  return it == fallbacks_.end() ? nullptr : &it->second;
}

IntentCatalog parse_catalog(std::string_view text) {
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
      static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF) {
    throw CatalogError({"parse error: byte-order mark is not allowed"});
  }

  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    throw CatalogError({"parse error at line " + std::to_string(e.mark.line + 1) + ", column " +
                        std::to_string(e.mark.column + 1) + ": " + e.msg});
  }
  if (!root || root.IsNull()) throw CatalogError({"parse error: empty catalog document"});
  if (!root.IsMap()) throw CatalogError({"parse error: top level must be a mapping" + where(root)});

  Reader r;

  std::vector<LanguageGroup> groups;
  if (const YAML::Node node = root["language_groups"]; !node || !node.IsSequence()) {
    r.issues.push_back("'language_groups' must be a list" + where(root));
  } else {
    for (std::size_t i = 0; i < node.size(); ++i) {
      const std::string ctx = "language_groups[" + std::to_string(i) + "]";
      if (!node[i].IsMap()) {
        r.issues.push_back(ctx + ": must be a mapping" + where(node[i]));
        continue;
      }
      auto id = r.scalar(node[i], "id", ctx);
      auto reply = r.scalar(node[i], "reply_language", ctx);
      if (id && reply) groups.push_back({*id, *reply});
    }
  }

  std::map<std::string, std::string> fallbacks;
  if (const YAML::Node node = root["fallbacks"]; !node || !node.IsMap()) {
    r.issues.push_back("'fallbacks' must be a mapping of language group to message" + where(root));
  } else {
    for (const auto& kv : node) {
      if (!kv.second.IsScalar()) {
        r.issues.push_back("fallbacks." + kv.first.as<std::string>() + ": must be a string" + where(kv.second));
        continue;
      }
      fallbacks[kv.first.as<std::string>()] = kv.second.Scalar();
    }
  }

  std::vector<ServiceSpec> services;
  if (const YAML::Node node = root["external_services"]) {
    if (!node.IsSequence()) {
      r.issues.push_back("'external_services' must be a list" + where(node));
    } else {
      for (std::size_t i = 0; i < node.size(); ++i) {
        const std::string ctx = "external_services[" + std::to_string(i) + "]";
        const YAML::Node s = node[i];
        if (!s.IsMap()) {
          r.issues.push_back(ctx + ": must be a mapping" + where(s));
          continue;
        }
        ServiceSpec spec;
        auto key = r.scalar(s, "key", ctx);
        auto endpoint = r.scalar(s, "endpoint", ctx);
        if (!key || !endpoint) continue;
        spec.key = *key;
        spec.endpoint = *endpoint;
        if (auto timeout = r.scalar(s, "timeout_ms", ctx, false)) {
          try {
            spec.timeout = std::chrono::milliseconds(std::stoll(*timeout));
          } catch (const std::exception&) {
            r.issues.push_back(ctx + ": timeout_ms must be an integer" + where(s["timeout_ms"]));
          }
        }
        if (const YAML::Node fb = s["fallback"]) {
          if (!fb.IsMap()) {
            r.issues.push_back(ctx + ": 'fallback' must be a mapping" + where(fb));
          } else {
            for (const auto& kv : fb) spec.fallback_text[kv.first.as<std::string>()] = kv.second.as<std::string>();
          }
        }
        services.push_back(std::move(spec));
      }
    }
  }

  std::vector<IntentEntry> entries;
  if (const YAML::Node node = root["intents"]; !node || !node.IsSequence()) {
    r.issues.push_back("'intents' must be a list" + where(root));
  } else {
    for (std::size_t i = 0; i < node.size(); ++i) {
      const YAML::Node n = node[i];
      std::string ctx = "intents[" + std::to_string(i) + "]";
      if (!n.IsMap()) {
        r.issues.push_back(ctx + ": must be a mapping" + where(n));
        continue;
      }
      IntentEntry e;
      auto id = r.scalar(n, "id", ctx);
      if (id) ctx += " \"" + *id + "\"";
      auto category = r.scalar(n, "category", ctx);
      auto group = r.scalar(n, "language_group", ctx);
      auto answer = r.scalar(n, "answer", ctx);
      auto service = r.scalar(n, "external_service", ctx, false);
      std::optional<Category> cat;
      if (category) {
        cat = parse_category(*category);
        if (!cat) r.issues.push_back(ctx + ": category must be 'faq' or 'chitchat'" + where(n["category"]));
      }
      const YAML::Node questions = n["questions"];
      bool questions_ok = questions && questions.IsSequence();
      if (!questions_ok) {
        r.issues.push_back(ctx + ": 'questions' must be a list" + where(n));
      } else {
        for (const auto& q : questions) {
          if (!q.IsScalar()) {
            r.issues.push_back(ctx + ": every question must be a string" + where(q));
            questions_ok = false;
            continue;
          }
          e.questions.push_back(q.Scalar());
        }
      }
      // A bad category alone still lets the entry through so that the
      // semantic checks below can report the rest of its problems.
      if (!id || !group || !answer || !questions_ok) continue;
      e.intent_id = *id;
      e.category = cat.value_or(Category::faq);
      e.language_group = *group;
      e.answer = *answer;
      e.external_service = service;
      entries.push_back(std::move(e));
    }
  }

  if (!r.issues.empty()) {
    for (auto& issue : catalog_issues(groups, entries, fallbacks, services)) r.issues.push_back(std::move(issue));
    throw CatalogError(std::move(r.issues));
  }
  return IntentCatalog(std::move(groups), std::move(entries), std::move(fallbacks), std::move(services));
}

IntentCatalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open catalog file: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw Error("failed reading catalog file: " + path.string());
  return parse_catalog(buffer.str());
}

std::string dump_catalog(const IntentCatalog& catalog) {
  YAML::Emitter out;
  out << YAML::BeginMap;

  out << YAML::Key << "language_groups" << YAML::Value << YAML::BeginSeq;
  for (const auto& g : catalog.language_groups()) {
    out << YAML::BeginMap << YAML::Key << "id" << YAML::Value << g.id << YAML::Key << "reply_language"
        << YAML::Value << g.reply_language << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "fallbacks" << YAML::Value << YAML::BeginMap;
  for (const auto& [group, message] : catalog.fallback_messages()) {
    out << YAML::Key << group << YAML::Value << YAML::DoubleQuoted << message;
  }
  out << YAML::EndMap;

  if (!catalog.services().empty()) {
    out << YAML::Key << "external_services" << YAML::Value << YAML::BeginSeq;
    for (const auto& s : catalog.services()) {
      out << YAML::BeginMap;
      out << YAML::Key << "key" << YAML::Value << s.key;
      out << YAML::Key << "endpoint" << YAML::Value << s.endpoint;
      out << YAML::Key << "timeout_ms" << YAML::Value << s.timeout.count();
      if (!s.fallback_text.empty()) {
        out << YAML::Key << "fallback" << YAML::Value << YAML::BeginMap;
        for (const auto& [group, text] : s.fallback_text) {
          out << YAML::Key << group << YAML::Value << YAML::DoubleQuoted << text;
        }
        out << YAML::EndMap;
      }
      out << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }

  out << YAML::Key << "intents" << YAML::Value << YAML::BeginSeq;
  for (const auto& e : catalog.entries()) {
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << e.intent_id;
    out << YAML::Key << "category" << YAML::Value << std::string(to_string(e.category));
    out << YAML::Key << "language_group" << YAML::Value << e.language_group;
    out << YAML::Key << "questions" << YAML::Value << YAML::BeginSeq;
    for (const auto& q : e.questions) out << YAML::DoubleQuoted << q;
    out << YAML::EndSeq;
    out << YAML::Key << "answer" << YAML::Value << YAML::DoubleQuoted << e.answer;
    if (e.external_service) out << YAML::Key << "external_service" << YAML::Value << *e.external_service;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

void save_catalog(const IntentCatalog& catalog, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write catalog file: " + path.string());
  out << dump_catalog(catalog);
  if (!out) throw Error("failed writing catalog file: " + path.string());
}

std::vector<LabeledExample> flatten(const IntentCatalog& catalog) {
  std::vector<LabeledExample> out;
  for (const auto& e : catalog.entries()) {
    for (const auto& q : e.questions) out.push_back({q, e.intent_id});
  }
  return out;
}

Split split(std::span<const LabeledExample> examples, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw Error("validation fraction must lie in (0, 1), got " + std::to_string(validation_fraction));
  }
  if (examples.size() < 2) throw Error("split needs at least 2 examples");

  // Group example positions by intent in first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_intent;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto [it, inserted] = by_intent.try_emplace(examples[i].intent_id);
    if (inserted) order.push_back(examples[i].intent_id);
    it->second.push_back(i);
  }

  const auto n = static_cast<double>(examples.size());
  std::size_t target = static_cast<std::size_t>(std::llround(n * validation_fraction));
  target = std::max<std::size_t>(target, 1);

  // Largest-remainder allocation, each intent capped at (size - 1).
  struct Quota {
    std::size_t group;
    std::size_t take;
    std::size_t cap;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t allocated = 0;
  for (std::size_t g = 0; g < order.size(); ++g) {
    const std::size_t size = by_intent[order[g]].size();
    const std::size_t cap = size - 1;
    const double exact = static_cast<double>(size) * static_cast<double>(target) / n;
    const std::size_t take = std::min(cap, static_cast<std::size_t>(std::floor(exact)));
    quotas.push_back({g, take, cap, exact - std::floor(exact)});
    allocated += take;
  }
  std::vector<std::size_t> by_remainder(quotas.size());
  std::iota(by_remainder.begin(), by_remainder.end(), 0);
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  // Hand out the rest by remainder; loop again if caps left some unplaced.
  bool progressed = true;
  while (allocated < target && progressed) {
    progressed = false;
    for (std::size_t k : by_remainder) {
      if (allocated >= target) break;
      if (quotas[k].take < quotas[k].cap) {
        ++quotas[k].take;
        ++allocated;
        progressed = true;
      }
    }
  }

  Rng rng(seed);
  std::vector<bool> in_validation(examples.size(), false);
  for (const auto& q : quotas) {
    std::vector<std::size_t> positions = by_intent[order[q.group]];
    rng.shuffle(std::span<std::size_t>(positions));
    for (std::size_t k = 0; k < q.take; ++k) in_validation[positions[k]] = true;
  }

  Split out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    (in_validation[i] ? out.validation : out.train).push_back(examples[i]);
  }
  return out;
}

std::map<std::string, CategoryCounts> content_statistics(const IntentCatalog& catalog) {
  std::map<std::string, CategoryCounts> out;
  for (const auto& e : catalog.entries()) {
    auto& counts = out[e.language_group];
    (e.category == Category::faq ? counts.faq : counts.chitchat) += 1;
  }
  return out;
}

}  // namespace crisisbot::corpus
