#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctxsense/harness.hpp"
#include "ctxsense/service.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ctxsense;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

struct CorpusArgs {
  std::string corpus;
  std::string embeddings;
  std::string senses;

  void add_to(CLI::App* app) {
    app->add_option("--corpus", corpus, "Directory with embeddings.txt, inventory.txt and cases.jsonl");
    app->add_option("--embeddings", embeddings, "Embedding file (text format)");
    app->add_option("--inventory", senses, "Sense declarations, one label#sense per line");
  }

  std::shared_ptr<const SenseInventory> load() const {
    fs::path emb = embeddings, inv = senses;
    if (!corpus.empty()) {
      if (emb.empty()) emb = fs::path(corpus) / "embeddings.txt";
      if (inv.empty() && fs::exists(fs::path(corpus) / "inventory.txt")) inv = fs::path(corpus) / "inventory.txt";
    }
    if (emb.empty()) throw Error("--embeddings or --corpus is required");
    const VectorStore store = load_vectors(emb);
    return std::make_shared<const SenseInventory>(inv.empty() ? build_inventory(store)
                                                              : load_sense_inventory(inv, store));
  }

  fs::path cases_path(const std::string& explicit_path) const {
    if (!explicit_path.empty()) return explicit_path;
    if (!corpus.empty()) return fs::path(corpus) / "cases.jsonl";
    throw Error("--cases or --corpus is required");
  }
};

SessionConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  return read_json(path).get<SessionConfig>();
}

// ---------------------------------------------------------------- replay

int run_replay(const CorpusArgs& corpus, const std::string& cases_arg, const std::string& config,
               const std::string& mode_name, const std::string& task_name, const std::string& out_dir,
               double threshold) {
  const auto inventory = corpus.load();
  const auto cases = read_cases(corpus.cases_path(cases_arg));
  const Mode mode = parse_mode(mode_name);
  const Task task = task_name.empty() ? task_for_mode(mode) : parse_task(task_name);
  const SessionConfig cfg = load_config(config);

  const auto results = run_cases(cases, cfg, task, mode, inventory);
  const Metrics metrics = aggregate(results, threshold);
  json summary = metrics;
  summary["mode"] = to_string(mode);
  summary["task"] = to_string(task);
  summary["config"] = config_for_mode(cfg, mode);
  summary["threshold"] = threshold;

  std::string per_case;
  for (const auto& r : results) per_case += json(r).dump() + "\n";
  write_text(fs::path(out_dir) / "metrics.json", summary.dump(2) + "\n");
  write_text(fs::path(out_dir) / "per_turn.csv", per_turn_csv(metrics));
  write_text(fs::path(out_dir) / "results.jsonl", per_case);
  std::cout << to_string(task) << '/' << to_string(mode) << ": " << metrics.cases
            << " cases, accuracy " << metrics.accuracy << ", mean final gold confidence "
            << metrics.mean_final_gold << "\n";
  return 0;
}

// ---------------------------------------------------------------- sweep

int run_sweep(const CorpusArgs& corpus, const std::string& cases_arg, const std::string& config,
              const std::string& grid_path, const std::string& mode_name, const std::string& task_name,
              const std::string& out_path) {
  const auto inventory = corpus.load();
  const auto cases = read_cases(corpus.cases_path(cases_arg));
  const Mode mode = parse_mode(mode_name);
  const Task task = task_name.empty() ? task_for_mode(mode) : parse_task(task_name);
  const auto configs = expand_grid(load_config(config), read_json(grid_path));

  std::string lines;
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const Metrics m = aggregate(run_cases(cases, configs[i], task, mode, inventory));
    json row{{"config", configs[i]}, {"accuracy", m.accuracy}, {"mean_final_gold", m.mean_final_gold}};
    lines += row.dump() + "\n";
    std::cout << '[' << i + 1 << '/' << configs.size() << "] accuracy " << m.accuracy << ", mean final "
              << m.mean_final_gold << std::endl;
    if (m.mean_final_gold > best_score) {
      best_score = m.mean_final_gold;
      best = i;
    }
  }
  if (!out_path.empty()) write_text(out_path, lines);
  std::cout << "best (mean final " << best_score << "): " << json(configs[best]).dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- synth

int run_synth(const std::string& spec_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  SynthSpec spec;
  if (!spec_path.empty()) spec = read_json(spec_path).get<SynthSpec>();
  if (seed) spec.seed = *seed;
  const SynthCorpus corpus = generate_synthetic(spec);
  write_corpus(corpus, out_dir);
  std::cout << "wrote " << corpus.store.size() << " vectors, " << corpus.cases.size() << " cases to "
            << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------- serve

HttpService* running_service = nullptr;

int run_serve(const CorpusArgs& corpus, const std::string& host, int port) {
  ServiceCore core;
  core.add_inventory("default", corpus.load());
  HttpService http(core);
  const int bound = http.bind(host, port);
  running_service = &http;
  std::signal(SIGINT, [](int) {
    if (running_service) running_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (running_service) running_service->stop();
  });
  std::cout << "listening on http://" << host << ':' << bound << std::endl;
  http.listen();
  running_service = nullptr;
  return 0;
}

// ---------------------------------------------------------------- session

void print_bars(std::ostream& out, const ConfidenceReport& report) {
  constexpr int kWidth = 40;
  std::size_t name_width = 0;
  for (const auto& [id, c] : report.per_sense) name_width = std::max(name_width, id.size());
  out << report.label << ":\n";
  for (const auto& [id, c] : report.per_sense) {
    const int filled = static_cast<int>(std::lround(c * kWidth));
    out << "  " << std::left << std::setw(static_cast<int>(name_width)) << id << " |"
        << std::string(static_cast<std::size_t>(filled), '#')
        << std::string(static_cast<std::size_t>(kWidth - filled), ' ') << "| " << std::fixed
        << std::setprecision(3) << c << std::defaultfloat << "\n";
  }
}

int run_session(const CorpusArgs& corpus, const std::string& config, const std::vector<std::string>& targets,
                std::istream& in, std::ostream& out) {
  Session session(load_config(config), corpus.load(), targets);
  out << "targets: ";
  for (const auto& t : session.targets()) out << t << ' ';
  out << "\nprefix lines with \"me:\" or \"them:\"; an empty line quits\n";
  for (const auto& t : session.targets()) print_bars(out, session.confidence(t));
  std::string line;
  TimeIndex t = 0;
  while (out << "> " << std::flush, std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) break;
    const auto colon = line.find(':');
    Utterance utt;
    try {
      if (colon == std::string::npos) throw Error("start the line with \"me:\" or \"them:\"");
      utt.role = parse_role(line.substr(0, colon));
      utt.tokens = split_whitespace(line.substr(colon + 1));
      utt.t = t;
      session.process_turn(utt);
      ++t;
    } catch (const Error& e) {
      out << "error: " << e.what() << "\n";
      continue;
    }
    for (const auto& label : session.targets()) print_bars(out, session.confidence(label));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online context and word-sense tracking with a particle filter"};
  app.require_subcommand(1);

  CorpusArgs corpus;
  std::string cases, config, mode = "full", task, out, grid, spec, host = "127.0.0.1", targets_csv;
  double threshold = 0.5;
  int port = 8080;
  std::optional<std::uint64_t> seed;
  bool interactive = false;

  auto* replay = app.add_subcommand("replay", "Replay cases and write metrics");
  corpus.add_to(replay);
  replay->add_option("--cases", cases, "Case file (one JSON record per line)");
  replay->add_option("--mode", mode, "full | no_kalman | fewer_particles | new_interpretation");
  replay->add_option("--task", task, "estimation | new_interpretation (default follows --mode)");
  replay->add_option("--config", config, "Session config (JSON)");
  replay->add_option("--threshold", threshold, "Majority threshold for accuracy");
  replay->add_option("--out", out, "Output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "Grid search over session configs");
  corpus.add_to(sweep);
  sweep->add_option("--grid", grid, "JSON object of field -> list of values")->required();
  sweep->add_option("--cases", cases, "Case file");
  sweep->add_option("--config", config, "Base session config (JSON)");
  sweep->add_option("--mode", mode, "Mode to score");
  sweep->add_option("--task", task, "Task to score");
  sweep->add_option("--out", out, "Write one JSON line per config here");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--spec", spec, "Generator spec (JSON); defaults when omitted");
  synth->add_option("--seed", seed, "Override the spec's seed");
  synth->add_option("--out", out, "Output directory")->required();

  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  corpus.add_to(serve);
  serve->add_option("--host", host, "Address to bind");
  serve->add_option("--port", port, "Port (0 picks a free one)");

  auto* session = app.add_subcommand("session", "Chat with a live session in the terminal");
  corpus.add_to(session);
  session->add_flag("--interactive", interactive, "Read utterances from the terminal");
  session->add_option("--targets", targets_csv, "Comma-separated target labels")->required();
  session->add_option("--config", config, "Session config (JSON)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*replay) return run_replay(corpus, cases, config, mode, task, out, threshold);
    if (*sweep) return run_sweep(corpus, cases, config, grid, mode, task, out);
    if (*synth) return run_synth(spec, out, seed);
    if (*serve) return run_serve(corpus, host, port);
    if (*session) {
      std::vector<std::string> targets;
      std::stringstream list(targets_csv);
      for (std::string t; std::getline(list, t, ',');) {
        if (!t.empty()) targets.push_back(t);
      }
      if (!interactive) std::cerr << "note: reading utterances from standard input\n";
      return run_session(corpus, config, targets, std::cin, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
