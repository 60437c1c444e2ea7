#include "ctxsense/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ctxsense/error.hpp"

namespace ctxsense {

// ---------------------------------------------------------------- cases

void to_json(nlohmann::json& j, const ReplayCase& c) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& u : c.turns) {
    turns.push_back({{"role", to_string(u.role)}, {"tokens", u.tokens}, {"t", u.t}});
  }
  nlohmann::json human = nlohmann::json::array();
  for (const auto& [t, conf] : c.human_confidence) human.push_back({t, conf});
  j = nlohmann::json{{"id", c.id},
                     {"target_label", c.target_label},
                     {"gold_sense", c.gold_sense},
                     {"turns", std::move(turns)},
                     {"human_confidence", std::move(human)}};
}

void from_json(const nlohmann::json& j, ReplayCase& c) {
  c.id = j.value("id", std::string());
  j.at("target_label").get_to(c.target_label);
  j.at("gold_sense").get_to(c.gold_sense);
  c.turns.clear();
  for (const auto& jt : j.at("turns")) {
    Utterance u;
    u.role = parse_role(jt.at("role").get<std::string>());
    jt.at("tokens").get_to(u.tokens);
    jt.at("t").get_to(u.t);
    c.turns.push_back(std::move(u));
  }
  c.human_confidence.clear();
  if (j.contains("human_confidence") && !j.at("human_confidence").is_null()) {
    for (const auto& row : j.at("human_confidence")) {
      if (!row.is_array() || row.size() != 2) throw Error("human_confidence rows are [t, c] pairs");
      c.human_confidence.emplace_back(row[0].get<TimeIndex>(), row[1].get<double>());
    }
  }
}

void validate_case(const ReplayCase& c, std::size_t turn_cap) {
  if (c.turns.empty()) throw Error("case '" + c.id + "' has no turns");
  if (c.turns.size() > turn_cap) {
    throw Error("case '" + c.id + "' has " + std::to_string(c.turns.size()) + " turns, cap is " +
                std::to_string(turn_cap));
  }
  const auto& first = c.turns.front().tokens;
  if (std::find(first.begin(), first.end(), c.target_label) == first.end()) {
    throw Error("case '" + c.id + "': first turn does not mention '" + c.target_label + "'");
  }
  for (std::size_t i = 0; i < c.turns.size(); ++i) {
    if (c.turns[i].tokens.empty()) throw Error("case '" + c.id + "' has an empty turn");
    if (i > 0 && c.turns[i].t < c.turns[i - 1].t) {
      throw Error("case '" + c.id + "' has turns out of order");
    }
  }
  for (const auto& [t, conf] : c.human_confidence) {
    if (!(conf >= 0.0 && conf <= 1.0)) throw Error("case '" + c.id + "': human confidence out of range");
  }
}

std::vector<ReplayCase> parse_cases(std::string_view text) {
  std::vector<ReplayCase> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      auto c = nlohmann::json::parse(line).get<ReplayCase>();
      if (c.id.empty()) c.id = "case-" + std::to_string(line_no);
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("bad case record: ") + e.what(), line_no);
    } catch (const LoadError&) {
      throw;
    } catch (const Error& e) {
      throw LoadError(e.what(), line_no);
    }
  }
  return out;
}

std::vector<ReplayCase> read_cases(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_cases(buf.str());
}

std::string format_cases(const std::vector<ReplayCase>& cases) {
  std::string out;
  for (const auto& c : cases) {
    out += nlohmann::json(c).dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------- modes

std::string to_string(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::no_kalman: return "no_kalman";
    case Mode::fewer_particles: return "fewer_particles";
    case Mode::new_interpretation: return "new_interpretation";
  }
  return "full";
}

Mode parse_mode(std::string_view s) {
  if (s == "full") return Mode::full;
  if (s == "no_kalman") return Mode::no_kalman;
  if (s == "fewer_particles") return Mode::fewer_particles;
  if (s == "new_interpretation") return Mode::new_interpretation;
  throw Error("unknown mode '" + std::string(s) + "'");
}

std::string to_string(Task t) {
  return t == Task::estimation ? "estimation" : "new_interpretation";
}

Task parse_task(std::string_view s) {
  if (s == "estimation") return Task::estimation;
  if (s == "new_interpretation") return Task::new_interpretation;
  throw Error("unknown task '" + std::string(s) + "'");
}

Task task_for_mode(Mode mode) {
  return mode == Mode::new_interpretation ? Task::new_interpretation : Task::estimation;
}

SessionConfig config_for_mode(SessionConfig base, Mode mode) {
  switch (mode) {
    case Mode::no_kalman: base.kalman_enabled = false; break;
    case Mode::fewer_particles: base.particle_multiplier = std::max<std::size_t>(1, base.particle_multiplier / 2); break;
    default: break;
  }
  return base;
}

void to_json(nlohmann::json& j, const RunResult& r) {
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& rec : r.trajectory) {
    traj.push_back({{"turn", rec.turn}, {"report", rec.report}, {"gold_confidence", rec.gold_confidence}});
  }
  j = nlohmann::json{{"case_id", r.case_id},
                     {"initial", r.initial},
                     {"initial_gold_confidence", r.initial_gold_confidence},
                     {"trajectory", std::move(traj)},
                     {"final_gold_confidence", r.final_gold_confidence},
                     {"correct", r.correct}};
  j["human_majority"] = r.human_majority ? nlohmann::json(*r.human_majority) : nlohmann::json(nullptr);
}

// ---------------------------------------------------------------- replay

void InProcessDriver::open(const SessionConfig& cfg, const std::vector<std::string>& targets,
                           const std::vector<std::pair<std::string, std::string>>& removed) {
  std::shared_ptr<const SenseInventory> inv = inventory_;
  for (const auto& [label, sense] : removed) {
    inv = std::make_shared<const SenseInventory>(inv->without_sense(label, sense));
  }
  session_ = std::make_unique<Session>(cfg, std::move(inv), targets);
}

void InProcessDriver::post(const Utterance& utt) { session_->process_turn(utt); }

ConfidenceReport InProcessDriver::confidence(const std::string& label) {
  return session_->confidence(label);
}

std::map<std::string, SenseGaussian> InProcessDriver::representatives(const std::string& label) {
  return session_->group_representatives(label);
}

double new_sense_gold_confidence(const ConfidenceReport& report,
                                 const std::map<std::string, SenseGaussian>& representatives,
                                 const SenseInventory& full_inventory, const std::string& label,
                                 const std::string& gold_sense) {
  const auto& senses = full_inventory.senses(label);
  double credited = 0.0;
  for (const auto& [id, land] : representatives) {
    if (!land.is_new) continue;
    auto conf = report.per_sense.find(id);
    if (conf == report.per_sense.end() || conf->second <= 0.0) continue;
    const Vec direction = from_nsphere(land.dist.mean);
    const Sense* nearest = nullptr;
    double best = 0.0;
    for (const auto& s : senses) {
      const double a = vector_angle(direction, s.vector);
      if (!nearest || a < best) {
        nearest = &s;
        best = a;
      }
    }
    if (nearest && nearest->id == gold_sense) credited += conf->second;
  }
  return credited;
}

RunResult run_case(const ReplayCase& c, const SessionConfig& cfg, Mode mode,
                   std::shared_ptr<const SenseInventory> inventory, SessionDriver* driver) {
  return run_case(c, cfg, task_for_mode(mode), mode, std::move(inventory), driver);
}

RunResult run_case(const ReplayCase& c, const SessionConfig& cfg, Task task, Mode mode,
                   std::shared_ptr<const SenseInventory> inventory, SessionDriver* driver) {
  validate_case(c);
  if (!inventory->find_sense(c.target_label, c.gold_sense)) {
    throw Error("case '" + c.id + "': gold sense '" + c.gold_sense + "' not in inventory");
  }
  InProcessDriver local(inventory);
  SessionDriver& d = driver ? *driver : local;

  const bool held_out = task == Task::new_interpretation;
  std::vector<std::pair<std::string, std::string>> removed;
  if (held_out) removed.emplace_back(c.target_label, c.gold_sense);
  d.open(config_for_mode(cfg, mode), {c.target_label}, removed);

  auto gold_of = [&](const ConfidenceReport& report) {
    if (!held_out) {
      auto it = report.per_sense.find(c.gold_sense);
      return it == report.per_sense.end() ? 0.0 : it->second;
    }
    return new_sense_gold_confidence(report, d.representatives(c.target_label), *inventory,
                                     c.target_label, c.gold_sense);
  };

  RunResult result;
  result.case_id = c.id;
  result.initial = d.confidence(c.target_label);
  result.initial_gold_confidence = gold_of(result.initial);
  result.final_gold_confidence = result.initial_gold_confidence;
  for (const auto& turn : c.turns) {
    d.post(turn);
    if (turn.role != Role::other) continue;
    TurnRecord rec;
    rec.turn = turn.t;
    rec.report = d.confidence(c.target_label);
    rec.gold_confidence = gold_of(rec.report);
    result.final_gold_confidence = rec.gold_confidence;
    result.trajectory.push_back(std::move(rec));
  }
  d.close();
  result.correct = result.final_gold_confidence > 0.5;
  if (!c.human_confidence.empty()) result.human_majority = c.human_confidence.back().second > 0.5;
  return result;
}

std::vector<RunResult> run_cases(const std::vector<ReplayCase>& cases, const SessionConfig& cfg,
                                 Mode mode, std::shared_ptr<const SenseInventory> inventory,
                                 SessionDriver* driver) {
  return run_cases(cases, cfg, task_for_mode(mode), mode, std::move(inventory), driver);
}

std::vector<RunResult> run_cases(const std::vector<ReplayCase>& cases, const SessionConfig& cfg,
                                 Task task, Mode mode,
                                 std::shared_ptr<const SenseInventory> inventory,
                                 SessionDriver* driver) {
  std::vector<RunResult> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(run_case(c, cfg, task, mode, inventory, driver));
  return out;
}

// ---------------------------------------------------------------- metrics

AgreementScores agreement(const std::vector<bool>& predicted, const std::vector<bool>& reference) {
  if (predicted.size() != reference.size()) throw Error("agreement needs paired labels");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && reference[i]) ++tp;
    if (predicted[i] && !reference[i]) ++fp;
    if (!predicted[i] && reference[i]) ++fn;
  }
  AgreementScores s;
  s.cases = predicted.size();
  s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

Metrics aggregate(const std::vector<RunResult>& results, double threshold) {
  if (results.empty()) throw Error("no results to aggregate");
  Metrics m;
  m.cases = results.size();
  std::size_t correct = 0;
  double final_sum = 0.0;
  std::vector<std::vector<double>> columns;
  std::vector<bool> predicted, reference;
  for (const auto& r : results) {
    if (r.final_gold_confidence > threshold) ++correct;
    final_sum += r.final_gold_confidence;
    std::vector<double> series{r.initial_gold_confidence};
    for (const auto& rec : r.trajectory) series.push_back(rec.gold_confidence);
    if (columns.size() < series.size()) columns.resize(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) columns[i].push_back(series[i]);
    if (r.human_majority) {
      predicted.push_back(r.final_gold_confidence > threshold);
      reference.push_back(*r.human_majority);
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(results.size());
  m.mean_final_gold = final_sum / static_cast<double>(results.size());
  for (std::size_t i = 0; i < columns.size(); ++i) {
    TurnStats s;
    s.turn = i;
    s.count = columns[i].size();
    for (double x : columns[i]) s.mean += x;
    s.mean /= static_cast<double>(s.count);
    for (double x : columns[i]) s.variance += (x - s.mean) * (x - s.mean);
    s.variance /= static_cast<double>(s.count);
    m.per_turn.push_back(s);
  }
  if (!predicted.empty()) m.human_agreement = agreement(predicted, reference);
  return m;
}

void to_json(nlohmann::json& j, const Metrics& m) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& s : m.per_turn) {
    turns.push_back({{"turn", s.turn}, {"mean", s.mean}, {"variance", s.variance}, {"count", s.count}});
  }
  j = nlohmann::json{{"cases", m.cases},
                     {"accuracy", m.accuracy},
                     {"mean_final_gold", m.mean_final_gold},
                     {"per_turn", std::move(turns)}};
  if (m.human_agreement) {
    j["human_agreement"] = {{"precision", m.human_agreement->precision},
                            {"recall", m.human_agreement->recall},
                            {"f1", m.human_agreement->f1},
                            {"cases", m.human_agreement->cases}};
  } else {
    j["human_agreement"] = nullptr;
  }
}

std::string per_turn_csv(const Metrics& m) {
  std::ostringstream out;
  out.precision(17);
  out << "turn,mean,variance\n";
  for (const auto& s : m.per_turn) out << s.turn << ',' << s.mean << ',' << s.variance << '\n';
  return out.str();
}

// ---------------------------------------------------------------- synthetic data

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"dim", s.dim},
                     {"n_labels", s.n_labels},
                     {"senses_per_label", s.senses_per_label},
                     {"words_per_sense", s.words_per_sense},
                     {"noise_words", s.noise_words},
                     {"n_cases", s.n_cases},
                     {"doc_length", s.doc_length},
                     {"tokens_per_turn", s.tokens_per_turn},
                     {"noise", s.noise},
                     {"target_rate", s.target_rate},
                     {"min_separation_deg", s.min_separation_deg},
                     {"cone_deg", s.cone_deg},
                     {"sense_drift_deg", s.sense_drift_deg},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  nlohmann::json defaults = s;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown synth field '" + key + "'");
  }
  auto field = [&](const char* key, auto& out) {
    if (j.contains(key)) j.at(key).get_to(out);
  };
  field("dim", s.dim);
  field("n_labels", s.n_labels);
  field("senses_per_label", s.senses_per_label);
  field("words_per_sense", s.words_per_sense);
  field("noise_words", s.noise_words);
  field("n_cases", s.n_cases);
  field("doc_length", s.doc_length);
  field("tokens_per_turn", s.tokens_per_turn);
  field("noise", s.noise);
  field("target_rate", s.target_rate);
  field("min_separation_deg", s.min_separation_deg);
  field("cone_deg", s.cone_deg);
  field("sense_drift_deg", s.sense_drift_deg);
  field("seed", s.seed);
}

namespace {

constexpr double kDegree = kPi / 180.0;

Vec random_unit(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Vec v(dim);
    double n = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      n += x * x;
    }
    n = std::sqrt(n);
    if (n < 1e-9) continue;
    for (auto& x : v) x /= n;
    return v;
  }
}

/// Unit vector at exactly `angle` from unit vector `centre`, in a random
/// perpendicular direction.
Vec tilt(const Vec& centre, double angle, Rng& rng) {
  Vec perp;
  for (;;) {
    perp = random_unit(centre.size(), rng);
    double dot = 0.0;
    for (std::size_t i = 0; i < centre.size(); ++i) dot += perp[i] * centre[i];
    double n = 0.0;
    for (std::size_t i = 0; i < centre.size(); ++i) {
      perp[i] -= dot * centre[i];
      n += perp[i] * perp[i];
    }
    n = std::sqrt(n);
    if (n < 1e-6) continue;
    for (auto& x : perp) x /= n;
    break;
  }
  Vec out(centre.size());
  for (std::size_t i = 0; i < centre.size(); ++i) {
    out[i] = std::cos(angle) * centre[i] + std::sin(angle) * perp[i];
  }
  return out;
}

Vec scaled(Vec v, double s) {
  for (auto& x : v) x *= s;
  return v;
}

}  // namespace

SynthCorpus generate_synthetic(const SynthSpec& spec) {
  if (spec.dim < 2) throw ConfigError("synthetic dim must be at least 2");
  if (spec.senses_per_label < 2) throw ConfigError("senses_per_label must be at least 2");
  if (spec.n_labels < 1 || spec.words_per_sense < 1 || spec.tokens_per_turn < 1 ||
      spec.doc_length < 1) {
    throw ConfigError("synthetic sizes must be positive");
  }
  if (spec.noise > 0.0 && spec.noise_words == 0) throw ConfigError("noise needs noise_words > 0");
  if (!(spec.noise >= 0.0 && spec.noise <= 1.0) || !(spec.target_rate >= 0.0 && spec.target_rate <= 1.0)) {
    throw ConfigError("noise and target_rate are probabilities");
  }

  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> norm_of(0.5, 1.5);
  const double min_sep = spec.min_separation_deg * kDegree;

  SynthCorpus out;
  out.store = VectorStore(spec.dim);
  std::map<std::string, std::vector<std::string>> topic_words;  // "label#sense" -> words

  for (std::size_t l = 0; l < spec.n_labels; ++l) {
    const std::string label = "amb" + std::to_string(l);
    std::vector<Vec> senses;
    constexpr int kAttempts = 20000;
    for (std::size_t s = 0; s < spec.senses_per_label; ++s) {
      int attempt = 0;
      for (; attempt < kAttempts; ++attempt) {
        Vec cand = random_unit(spec.dim, rng);
        bool ok = std::all_of(senses.begin(), senses.end(),
                              [&](const Vec& other) { return vector_angle(cand, other) >= min_sep; });
        if (ok) {
          senses.push_back(std::move(cand));
          break;
        }
      }
      if (attempt == kAttempts) {
        throw ConfigError("cannot place " + std::to_string(spec.senses_per_label) + " senses " +
                          std::to_string(spec.min_separation_deg) + " degrees apart in " +
                          std::to_string(spec.dim) + " dimensions");
      }
    }
    for (std::size_t s = 0; s < senses.size(); ++s) {
      const std::string key = label + "#s" + std::to_string(s);
      out.store.add(key, scaled(senses[s], norm_of(rng)));
      out.declarations += key + "\n";
      const Vec centre = tilt(senses[s], spec.sense_drift_deg * kDegree, rng);
      out.topic_centres[key] = centre;
      for (std::size_t w = 0; w < spec.words_per_sense; ++w) {
        const std::string word = "w" + std::to_string(l) + "_" + std::to_string(s) + "_" + std::to_string(w);
        const double angle = spec.cone_deg * kDegree * unit(rng);
        out.store.add(word, scaled(tilt(centre, angle, rng), norm_of(rng)));
        out.word_topic[word] = key;
        topic_words[key].push_back(word);
      }
    }
  }
  std::vector<std::string> noise_vocab;
  for (std::size_t n = 0; n < spec.noise_words; ++n) {
    const std::string word = "n" + std::to_string(n);
    out.store.add(word, scaled(random_unit(spec.dim, rng), norm_of(rng)));
    noise_vocab.push_back(word);
  }
  out.inventory = build_inventory(out.store, out.declarations);

  for (std::size_t c = 0; c < spec.n_cases; ++c) {
    ReplayCase rc;
    const std::size_t l = c % spec.n_labels;
    rc.target_label = "amb" + std::to_string(l);
    rc.gold_sense = "s" + std::to_string(rng() % spec.senses_per_label);
    rc.id = "synth-" + std::to_string(c);
    const auto& words = topic_words.at(rc.target_label + "#" + rc.gold_sense);
    for (std::size_t t = 0; t < spec.doc_length; ++t) {
      Utterance u;
      u.role = Role::other;
      u.t = static_cast<TimeIndex>(t);
      if (t == 0 || unit(rng) < spec.target_rate) u.tokens.push_back(rc.target_label);
      while (u.tokens.size() < spec.tokens_per_turn) {
        if (unit(rng) < spec.noise) {
          u.tokens.push_back(noise_vocab[rng() % noise_vocab.size()]);
        } else {
          u.tokens.push_back(words[rng() % words.size()]);
        }
      }
      rc.turns.push_back(std::move(u));
    }
    out.cases.push_back(std::move(rc));
  }
  return out;
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  corpus.store.save(dir / "embeddings.txt");
  std::ofstream(dir / "inventory.txt", std::ios::binary) << corpus.declarations;
  std::ofstream(dir / "cases.jsonl", std::ios::binary) << format_cases(corpus.cases);
}

// ---------------------------------------------------------------- sweep

std::vector<SessionConfig> expand_grid(const SessionConfig& base, const nlohmann::json& grid) {
  if (!grid.is_object()) throw ConfigError("grid must be an object of value lists");
  std::vector<nlohmann::json> configs{nlohmann::json(base)};
  for (const auto& [field, values] : grid.items()) {
    if (!values.is_array() || values.empty()) {
      throw ConfigError("grid field '" + field + "' needs a non-empty list");
    }
    std::vector<nlohmann::json> next;
    for (const auto& c : configs) {
      for (const auto& v : values) {
        auto copy = c;
        copy[field] = v;
        next.push_back(std::move(copy));
      }
    }
    configs = std::move(next);
  }
  std::vector<SessionConfig> out;
  for (const auto& c : configs) {
    auto cfg = c.get<SessionConfig>();
    cfg.validate();
    out.push_back(cfg);
  }
  return out;
}

}  // namespace ctxsense
