#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxsense/engine.hpp"

namespace ctxsense {

inline constexpr std::size_t kDefaultTurnCap = 30;

struct ReplayCase {
  std::string id;
  std::string target_label;
  std::string gold_sense;
  std::vector<Utterance> turns;
  std::vector<std::pair<TimeIndex, double>> human_confidence;
};

void to_json(nlohmann::json& j, const ReplayCase& c);
void from_json(const nlohmann::json& j, ReplayCase& c);

/// Throws Error if the first turn lacks the target, turns are out of order,
/// or there are more than `turn_cap` turns.
void validate_case(const ReplayCase& c, std::size_t turn_cap = kDefaultTurnCap);

/// One JSON record per line; blank lines are skipped. Cases without an id
/// get "case-<line>".
std::vector<ReplayCase> read_cases(const std::filesystem::path& path);
std::vector<ReplayCase> parse_cases(std::string_view text);
std::string format_cases(const std::vector<ReplayCase>& cases);

enum class Mode { full, no_kalman, fewer_particles, new_interpretation };

std::string to_string(Mode m);
Mode parse_mode(std::string_view s);

/// estimation: the gold sense is in the inventory. new_interpretation: the
/// gold sense is withheld and only a created sense can be credited.
enum class Task { estimation, new_interpretation };

std::string to_string(Task t);
Task parse_task(std::string_view s);

/// The task a mode implies when none is given: new_interpretation mode is
/// the full model on the held-out task.
Task task_for_mode(Mode mode);

/// Session settings a mode implies on top of the base configuration.
SessionConfig config_for_mode(SessionConfig base, Mode mode);

struct TurnRecord {
  TimeIndex turn = 0;
  ConfidenceReport report;
  double gold_confidence = 0.0;
};

struct RunResult {
  std::string case_id;
  ConfidenceReport initial;
  double initial_gold_confidence = 0.0;
  std::vector<TurnRecord> trajectory;  // one entry per partner turn
  double final_gold_confidence = 0.0;
  bool correct = false;
  std::optional<bool> human_majority;
};

void to_json(nlohmann::json& j, const RunResult& r);

/// Whatever runs the session for a replay: in-process, or a remote service.
class SessionDriver {
 public:
  virtual ~SessionDriver() = default;
  /// `removed` lists (label, sense) pairs withheld from the session.
  virtual void open(const SessionConfig& cfg, const std::vector<std::string>& targets,
                    const std::vector<std::pair<std::string, std::string>>& removed) = 0;
  virtual void post(const Utterance& utt) = 0;
  virtual ConfidenceReport confidence(const std::string& label) = 0;
  virtual std::map<std::string, SenseGaussian> representatives(const std::string& label) = 0;
  virtual void close() = 0;
};

class InProcessDriver : public SessionDriver {
 public:
  explicit InProcessDriver(std::shared_ptr<const SenseInventory> inventory)
      : inventory_(std::move(inventory)) {}

  void open(const SessionConfig& cfg, const std::vector<std::string>& targets,
            const std::vector<std::pair<std::string, std::string>>& removed) override;
  void post(const Utterance& utt) override;
  ConfidenceReport confidence(const std::string& label) override;
  std::map<std::string, SenseGaussian> representatives(const std::string& label) override;
  void close() override { session_.reset(); }

  const Session* session() const { return session_.get(); }

 private:
  std::shared_ptr<const SenseInventory> inventory_;
  std::unique_ptr<Session> session_;
};

/// Confidence credited to the held-out gold sense: the summed confidence of
/// created senses whose direction is closer to the gold vector than to any
/// other sense of the label.
double new_sense_gold_confidence(const ConfidenceReport& report,
                                 const std::map<std::string, SenseGaussian>& representatives,
                                 const SenseInventory& full_inventory, const std::string& label,
                                 const std::string& gold_sense);

/// Replays one case. `driver` defaults to an in-process session.
RunResult run_case(const ReplayCase& c, const SessionConfig& cfg, Mode mode,
                   std::shared_ptr<const SenseInventory> inventory,
                   SessionDriver* driver = nullptr);
RunResult run_case(const ReplayCase& c, const SessionConfig& cfg, Task task, Mode mode,
                   std::shared_ptr<const SenseInventory> inventory,
                   SessionDriver* driver = nullptr);

std::vector<RunResult> run_cases(const std::vector<ReplayCase>& cases, const SessionConfig& cfg,
                                 Mode mode, std::shared_ptr<const SenseInventory> inventory,
                                 SessionDriver* driver = nullptr);
std::vector<RunResult> run_cases(const std::vector<ReplayCase>& cases, const SessionConfig& cfg,
                                 Task task, Mode mode,
                                 std::shared_ptr<const SenseInventory> inventory,
                                 SessionDriver* driver = nullptr);

struct TurnStats {
  std::size_t turn = 0;  // 0: before any input
  double mean = 0.0;
  double variance = 0.0;
  std::size_t count = 0;
};

struct AgreementScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t cases = 0;
};

struct Metrics {
  std::size_t cases = 0;
  double accuracy = 0.0;
  double mean_final_gold = 0.0;
  std::vector<TurnStats> per_turn;
  std::optional<AgreementScores> human_agreement;
};

void to_json(nlohmann::json& j, const Metrics& m);

Metrics aggregate(const std::vector<RunResult>& results, double threshold = 0.5);

/// Precision/recall/F1 of predicted majorities against reference majorities.
AgreementScores agreement(const std::vector<bool>& predicted, const std::vector<bool>& reference);

/// CSV with header "turn,mean,variance".
std::string per_turn_csv(const Metrics& m);

// ---------------------------------------------------------------- synthetic data

struct SynthSpec {
  std::size_t dim = 16;
  std::size_t n_labels = 10;
  std::size_t senses_per_label = 3;
  std::size_t words_per_sense = 12;
  std::size_t noise_words = 60;
  std::size_t n_cases = 50;
  std::size_t doc_length = 30;
  std::size_t tokens_per_turn = 6;
  double noise = 0.2;               // probability a token is a noise word
  double target_rate = 0.3;         // probability the target recurs in a later turn
  double min_separation_deg = 60.0;  // between senses of one label
  double cone_deg = 25.0;           // context words around their topic centre
  double sense_drift_deg = 20.0;    // stored sense vector vs. its topic centre
  std::uint64_t seed = 7;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

struct SynthCorpus {
  VectorStore store;
  SenseInventory inventory;
  std::string declarations;  // "label#sense" rows of the ambiguous labels
  std::vector<ReplayCase> cases;
  std::map<std::string, Vec> topic_centres;  // "label#sense" -> unit direction
  std::map<std::string, std::string> word_topic;  // content word -> "label#sense"
};

/// Deterministic for a given spec (including its seed). Throws ConfigError
/// if the sense separation cannot be met in the requested dimension.
SynthCorpus generate_synthetic(const SynthSpec& spec);

/// Writes embeddings.txt, inventory.txt and cases.jsonl into `dir`.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

// ---------------------------------------------------------------- sweep

/// Cartesian product of a grid {"field": [values...]} applied over `base`.
std::vector<SessionConfig> expand_grid(const SessionConfig& base, const nlohmann::json& grid);

}  // namespace ctxsense
