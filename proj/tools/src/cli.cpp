#include "crisisbot/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <pthread.h>
#include <sstream>
#include <string>
#include <thread>

#include "crisisbot/classifier.hpp"
#include "crisisbot/corpus.hpp"
#include "crisisbot/datastore.hpp"
#include "crisisbot/dialogue.hpp"
#include "crisisbot/embednet.hpp"
#include "crisisbot/evalkit.hpp"
#include "crisisbot/featurizer.hpp"
#include "crisisbot/gateway.hpp"

namespace crisisbot::cli {

namespace {

using nlohmann::json;

std::string percent(double fraction) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << fraction * 100.0 << '%';
  return s.str();
}

std::string full_precision(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

struct TrainOptions {
  std::string catalog;
  std::string out;
  std::string report;
  std::uint64_t seed = 42;
  int epochs = embed::Hyperparams{}.epochs;
  double learning_rate = embed::Hyperparams{}.learning_rate;
  int dim_embed = embed::Hyperparams{}.dim_embed;
  int dim_hidden = embed::Hyperparams{}.dim_hidden;
  int negatives = embed::Hyperparams{}.negatives_per_example;
  int min_count = 1;
  double validation_fraction = corpus::kDefaultValidationFraction;
};

int do_train(const TrainOptions& o, std::ostream& out) {
  const auto catalog = corpus::load_catalog(o.catalog);
  const auto examples = corpus::flatten(catalog);
  const auto parts = corpus::split(examples, o.validation_fraction, o.seed);

  embed::Hyperparams hp;
  hp.epochs = o.epochs;
  hp.learning_rate = o.learning_rate;
  hp.dim_embed = o.dim_embed;
  hp.dim_hidden = o.dim_hidden;
  hp.negatives_per_example = o.negatives;
  hp.rng_seed = o.seed;

  auto vocab = features::build_vocabulary(parts.train, o.min_count);
  auto model = embed::init_model(std::move(vocab), hp);
  model.split = embed::SplitInfo{o.validation_fraction, o.seed};

  const auto start = std::chrono::steady_clock::now();
  const auto encoded = embed::encode_examples(model, parts.train);
  const auto report = embed::train(model, encoded);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  embed::save_model(model, o.out);
  const double val_acc = parts.validation.empty() ? 0.0 : classify::evaluate_accuracy(model, parts.validation);

  json doc;
  doc["final_train_accuracy"] = report.final_train_accuracy;
  doc["validation_accuracy"] = val_acc;
  doc["n_train"] = parts.train.size();
  doc["n_validation"] = parts.validation.size();
  doc["n_intents"] = model.num_labels();
  doc["n_grams"] = model.vocab.num_grams();
  doc["seed"] = o.seed;
  doc["epochs"] = hp.epochs;
  doc["seconds"] = seconds;
  doc["model_fingerprint"] = embed::model_fingerprint(model);
  doc["loss_per_epoch"] = report.loss_per_epoch;
  const std::string report_path = o.report.empty() ? o.out + ".train.json" : o.report;
  std::ofstream(report_path) << doc.dump(2) << '\n';

  out << "intents " << model.num_labels() << ", grams " << model.vocab.num_grams() << ", train "
      << parts.train.size() << ", validation " << parts.validation.size() << '\n';
  out << "final loss " << (report.loss_per_epoch.empty() ? 0.0 : report.loss_per_epoch.back()) << '\n';
  out << "train accuracy " << percent(report.final_train_accuracy) << '\n';
  out << "validation accuracy " << percent(val_acc) << '\n';
  out << "model " << o.out << " (" << embed::model_fingerprint(model) << ")\n";
  return 0;
}

/// The validation half of the split the model was trained on.
std::vector<corpus::LabeledExample> validation_set(const corpus::IntentCatalog& catalog,
                                                   const embed::EmbeddingModel& model) {
  const auto info = model.split.value_or(embed::SplitInfo{});
  const auto examples = corpus::flatten(catalog);
  return corpus::split(examples, info.validation_fraction, info.seed).validation;
}

int do_calibrate(const std::string& catalog_path, const std::string& model_path, const std::string& out_path,
                 std::ostream& out) {
  const auto catalog = corpus::load_catalog(catalog_path);
  const auto model = embed::load_model(model_path);
  const auto validation = validation_set(catalog, model);
  const auto report = classify::calibrate_threshold(model, validation);
  if (!out_path.empty()) classify::save_report(report, out_path);
  out << "validation accuracy " << percent(static_cast<double>(report.n_correct) / validation.size()) << " ("
      << report.n_correct << '/' << validation.size() << ")\n";
  out << "threshold " << full_precision(report.threshold) << '\n';
  return 0;
}

struct EngineOptions {
  std::string model;
  std::string catalog;
  std::optional<double> threshold;
  std::string calibration;
  std::string data_dir;
};

struct LoadedEngine {
  std::shared_ptr<const dialogue::Engine> engine;
  std::string model_version;
};

LoadedEngine load_engine(const EngineOptions& o, const std::shared_ptr<datastore::UnansweredLog>& unanswered) {
  auto catalog = std::make_shared<const corpus::IntentCatalog>(corpus::load_catalog(o.catalog));
  auto model = std::make_shared<const embed::EmbeddingModel>(embed::load_model(o.model));
  double threshold = 0.0;
  if (o.threshold) {
    threshold = *o.threshold;
  } else if (!o.calibration.empty()) {
    threshold = classify::read_threshold(o.calibration);
  } else {
    threshold = classify::calibrate_threshold(*model, validation_set(*catalog, *model)).threshold;
    spdlog::info("calibrated threshold {}", threshold);
  }
  LoadedEngine loaded;
  loaded.model_version = embed::model_fingerprint(*model);
  loaded.engine = std::make_shared<const dialogue::Engine>(
      model, threshold, catalog, dialogue::ConnectorRegistry::from_catalog(*catalog), unanswered);
  return loaded;
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

struct ServeOptions {
  EngineOptions engine;
  std::string addr;
  std::string webhook_secret;
  std::string static_dir;
  std::string config;
  std::string send_api;
};

/// Fills unset options from the environment, then from the config file.
void merge_serve_settings(ServeOptions& o) {
  json config = json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw Error("cannot open config file: " + o.config);
    config = json::parse(in);
  }
  auto pick = [&](std::string& field, const char* env, const char* key, const std::string& def) {
    if (!field.empty()) return;
    field = env_or(env, config.contains(key) ? config[key].get<std::string>() : def);
  };
  pick(o.addr, "BOT_ADDR", "addr", "127.0.0.1:8080");
  pick(o.engine.model, "BOT_MODEL", "model", "");
  pick(o.engine.catalog, "BOT_CATALOG", "catalog", "");
  pick(o.webhook_secret, "BOT_WEBHOOK_SECRET", "webhook_secret", "");
  pick(o.engine.data_dir, "BOT_DATA_DIR", "data_dir", "botdata");
  pick(o.engine.calibration, "BOT_CALIBRATION", "calibration", "");
  pick(o.static_dir, "BOT_STATIC_DIR", "static_dir", "");
  if (!o.engine.threshold) {
    if (const char* t = std::getenv("BOT_THRESHOLD"); t && *t) {
      o.engine.threshold = std::stod(t);
    } else if (config.contains("threshold")) {
      o.engine.threshold = config["threshold"].get<double>();
    }
  }
  if (o.engine.model.empty() || o.engine.catalog.empty()) throw Error("serve needs a model and a catalog");
}

int do_serve(ServeOptions o, std::ostream& out) {
  merge_serve_settings(o);
  const auto paths = datastore::data_paths(o.engine.data_dir);
  auto store = std::make_shared<datastore::ConversationStore>(paths.conversations);
  auto unanswered = std::make_shared<datastore::UnansweredLog>(paths.unanswered);

  gateway::GatewayConfig config;
  config.webhook_secret = o.webhook_secret;
  if (!o.static_dir.empty()) config.static_dir = o.static_dir;
  gateway::Gateway gw(config, store);
  gw.add_adapter(std::make_shared<gateway::MessengerSimulator>(
      o.send_api.empty() ? std::nullopt : std::optional<std::string>(o.send_api)));

  const auto address = gateway::parse_address(o.addr);
  const int port = gw.bind(address.host, address.port);

  // Block the shutdown signals before any thread starts so that only sigwait
  // below sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  std::thread server([&gw] { gw.listen(); });
  gw.wait_until_listening();
  out << "listening on " << address.host << ':' << port << std::endl;

  // Health checks are answered ("loading") while the engine loads.
  try {
    auto loaded = load_engine(o.engine, unanswered);
    gw.load_engine(loaded.engine, loaded.model_version);
    spdlog::info("model {} loaded, threshold {}", loaded.model_version, loaded.engine->threshold());
  } catch (...) {
    gw.stop();
    server.join();
    throw;
  }

  int received = 0;
  sigwait(&signals, &received);
  spdlog::info("signal {}, shutting down", received);
  gw.stop();
  server.join();
  return 0;
}

int do_chat(EngineOptions o, std::istream& in, std::ostream& out) {
  std::shared_ptr<datastore::ConversationStore> store;
  std::shared_ptr<datastore::UnansweredLog> unanswered;
  if (!o.data_dir.empty()) {
    const auto paths = datastore::data_paths(o.data_dir);
    store = std::make_shared<datastore::ConversationStore>(paths.conversations);
    unanswered = std::make_shared<datastore::UnansweredLog>(paths.unanswered);
  }
  const auto loaded = load_engine(o, unanswered);
  auto session = dialogue::Session::start("cli-" + format_date(std::chrono::floor<std::chrono::days>(now_utc())),
                                          dialogue::Channel::cli);
  std::string line;
  for (;;) {
    out << "> " << std::flush;
    if (!std::getline(in, line) || line.empty()) break;
    const auto now = now_utc();
    const auto reply = loaded.engine->handle_message(session, line, now);
    out << reply.text << '\n';
    if (store) {
      datastore::Turn t{now, line, std::string(dialogue::to_string(reply.kind)), reply.intent_id, reply.confidence,
                        reply.text};
      store->record_turn(session.session_id, "cli", t);
    }
  }
  return 0;
}

int do_eval_ssa(const std::string& path, std::ostream& out, std::ostream& err) {
  const auto ingested = evalkit::ingest_judgments(path);
  if (ingested.coerced > 0) {
    err << "warning: " << ingested.coerced << " row(s) marked specific but not sensible counted as not specific\n";
  }
  const auto r = evalkit::ssa(ingested.judgments);
  out << "responses " << r.n_responses << '\n';
  out << "judges " << r.n_judges << '\n';
  out << "sensibleness " << percent(r.sensibleness) << '\n';
  out << "specificity " << percent(r.specificity) << '\n';
  out << "ssa " << percent(r.ssa) << '\n';
  return 0;
}

Timestamp parse_time_flag(const std::string& text, const char* flag) {
  const auto t = parse_rfc3339(text);
  if (!t) throw Error(std::string(flag) + ": expected an RFC 3339 time or YYYY-MM-DD, got \"" + text + "\"");
  return *t;
}

int do_stats(const std::string& data_dir, const std::string& from, const std::string& to, const std::string& day,
             std::ostream& out) {
  datastore::UsageQuery q;
  q.from = parse_time_flag(from, "--from");
  q.to = parse_time_flag(to, "--to");
  if (day.empty()) {
    q.day = std::chrono::floor<std::chrono::days>(q.to - std::chrono::milliseconds(1));
  } else {
    const auto d = parse_date(day);
    if (!d) throw Error("--day: expected YYYY-MM-DD");
    q.day = *d;
  }
  const datastore::ConversationStore store(datastore::data_paths(data_dir).conversations);
  const auto s = store.usage_stats(q);
  out << "unique users " << s.unique_users << '\n';
  out << "questions " << s.total_questions << '\n';
  out << "questions per conversation: avg " << s.avg_q_per_conv << ", min " << s.min_q_per_conv << ", max "
      << s.max_q_per_conv << '\n';
  out << "daily active " << s.daily_active << " (" << format_date(q.day) << "), monthly active " << s.monthly_active
      << '\n';
  out << "stickiness " << std::fixed << std::setprecision(2) << s.stickiness * 100.0 << "%\n";
  return 0;
}

int do_sample(const std::string& data_dir, std::size_t count, std::size_t min_turns, std::uint64_t seed,
              const std::string& out_path, std::ostream& out) {
  const datastore::ConversationStore store(datastore::data_paths(data_dir).conversations);
  std::ofstream file(out_path, std::ios::binary);
  if (!file) throw Error("cannot write " + out_path);
  const auto n = evalkit::write_sample_sheet(store, count, min_turns, seed, file);
  out << "wrote " << n << " conversation(s) to " << out_path << '\n';
  return 0;
}

void add_engine_flags(CLI::App* cmd, EngineOptions& o, bool required) {
  auto* model = cmd->add_option("--model", o.model, "Model artifact");
  auto* catalog = cmd->add_option("--catalog", o.catalog, "Intent catalog (YAML)");
  if (required) {
    model->required();
    catalog->required();
  }
  auto* thr = cmd->add_option("--threshold", o.threshold, "Confidence threshold override");
  cmd->add_option("--calibration", o.calibration, "Calibration report to read the threshold from")->excludes(thr);
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multilingual crisis-information chatbot", "crisisbot"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train a model on the catalog's training split");
  train->add_option("--catalog", train_opts.catalog, "Intent catalog (YAML)")->required();
  train->add_option("--out", train_opts.out, "Model artifact to write")->required();
  train->add_option("--report", train_opts.report, "Training report (JSON); default <out>.train.json");
  train->add_option("--seed", train_opts.seed, "Seed for the split, initialization and sampling");
  train->add_option("--epochs", train_opts.epochs);
  train->add_option("--learning-rate", train_opts.learning_rate);
  train->add_option("--dim-embed", train_opts.dim_embed);
  train->add_option("--dim-hidden", train_opts.dim_hidden);
  train->add_option("--negatives", train_opts.negatives);
  train->add_option("--min-count", train_opts.min_count);
  train->add_option("--validation-fraction", train_opts.validation_fraction);

  std::string cal_catalog, cal_model, cal_out;
  auto* calibrate = app.add_subcommand("calibrate", "Compute the fallback threshold on the validation split");
  calibrate->add_option("--catalog", cal_catalog)->required();
  calibrate->add_option("--model", cal_model)->required();
  calibrate->add_option("--out", cal_out, "Calibration report (TSV)");

  ServeOptions serve_opts;
  auto* serve = app.add_subcommand("serve", "Run the HTTP gateway");
  add_engine_flags(serve, serve_opts.engine, false);
  serve->add_option("--addr", serve_opts.addr, "host:port (env BOT_ADDR)");
  serve->add_option("--data", serve_opts.engine.data_dir, "Data directory (env BOT_DATA_DIR)");
  serve->add_option("--webhook-secret", serve_opts.webhook_secret, "env BOT_WEBHOOK_SECRET");
  serve->add_option("--static", serve_opts.static_dir, "Directory served at /");
  serve->add_option("--send-api", serve_opts.send_api, "URL the messenger simulator posts replies to");
  serve->add_option("--config", serve_opts.config, "JSON config file");

  EngineOptions chat_opts;
  auto* chat = app.add_subcommand("chat", "Talk to the bot in the terminal; an empty line quits");
  add_engine_flags(chat, chat_opts, true);
  chat->add_option("--data", chat_opts.data_dir, "Log turns to this data directory");

  std::string judgments;
  auto* eval = app.add_subcommand("eval-ssa", "Sensibleness and specificity of labelled responses");
  eval->add_option("--judgments", judgments)->required();

  std::string stats_data, stats_from, stats_to, stats_day;
  auto* stats = app.add_subcommand("stats", "Usage statistics over [from, to)");
  stats->add_option("--data", stats_data)->required();
  stats->add_option("--from", stats_from)->required();
  stats->add_option("--to", stats_to)->required();
  stats->add_option("--day", stats_day, "Day for daily actives; default the last day of the range");

  std::string sample_data, sample_out;
  std::size_t sample_count = 100, sample_min_turns = 1;
  std::uint64_t sample_seed = 42;
  auto* sample = app.add_subcommand("sample-ssa", "Draw conversations for SSA labelling");
  sample->add_option("--data", sample_data)->required();
  sample->add_option("--out", sample_out)->required();
  sample->add_option("--count", sample_count);
  sample->add_option("--min-turns", sample_min_turns);
  sample->add_option("--seed", sample_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code();
  }

  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*train) return do_train(train_opts, out);
    if (*calibrate) return do_calibrate(cal_catalog, cal_model, cal_out, out);
    if (*serve) return do_serve(serve_opts, out);
    if (*chat) return do_chat(chat_opts, in, out);
    if (*eval) return do_eval_ssa(judgments, out, err);
    if (*stats) return do_stats(stats_data, stats_from, stats_to, stats_day, out);
    if (*sample) return do_sample(sample_data, sample_count, sample_min_turns, sample_seed, sample_out, out);
  } catch (const corpus::CatalogError& e) {
    err << "error: invalid catalog\n";
    for (const auto& issue : e.issues()) err << "  " << issue << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace crisisbot::cli
