#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "ctxsense/error.hpp"
#include "ctxsense/geometry.hpp"
#include "ctxsense/harness.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxsense;
using doctest::Approx;

namespace {

RunResult finished(double final_gold, std::optional<double> human = std::nullopt) {
  RunResult r;
  r.initial_gold_confidence = 0.5;
  r.final_gold_confidence = final_gold;
  r.trajectory.push_back({0, {}, final_gold});
  r.correct = final_gold > 0.5;
  if (human) r.human_majority = *human > 0.5;
  return r;
}

std::shared_ptr<const SenseInventory> four_sense_inventory() {
  auto inv = std::make_shared<SenseInventory>(3);
  inv->add_sense("crane", "bird", {1.0, 0.1, 0.1});
  inv->add_sense("crane", "machine", {0.1, 1.0, 0.1});
  inv->add_sense("crane", "neck", {0.1, 0.1, 1.0});
  inv->add_sense("crane", "origami", {-1.0, 0.2, 0.3});
  inv->add_sense("wing", "", {0.9, 0.2, 0.1});
  inv->add_sense("lake", "", {0.8, 0.1, 0.4});
  inv->add_sense("steel", "", {0.1, 0.9, 0.3});
  return inv;
}

ReplayCase crane_case() {
  ReplayCase c;
  c.id = "crane-1";
  c.target_label = "crane";
  c.gold_sense = "bird";
  c.turns = {{Role::other, {"crane", "wing"}, 0},
             {Role::other, {"lake", "wing"}, 1},
             {Role::other, {"crane", "lake"}, 2}};
  return c;
}

SessionConfig small_config() {
  SessionConfig cfg;
  cfg.particle_multiplier = 5;
  cfg.obs_var0 = 1.0;
  cfg.obs_var = 1.0;
  cfg.seed = 3;
  return cfg;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("aggregate: accuracy counts finals strictly above one half") {
  CHECK(aggregate({finished(0.9), finished(0.7)}).accuracy == 1.0);
  const Metrics m = aggregate({finished(0.6), finished(0.4)});
  CHECK(m.accuracy == 0.5);
  CHECK(m.mean_final_gold == Approx(0.5));
  CHECK(aggregate({finished(0.5)}).accuracy == 0.0);
  CHECK_THROWS_AS(aggregate({}), Error);
}

TEST_CASE("aggregate: agreement with human majorities") {
  // model (1,1,0) against human (1,0,0): tp=1 fp=1 fn=0
  const Metrics m = aggregate({finished(0.8, 0.9), finished(0.7, 0.2), finished(0.3, 0.1)});
  REQUIRE(m.human_agreement.has_value());
  CHECK(m.human_agreement->precision == Approx(0.5).epsilon(1e-12));
  CHECK(m.human_agreement->recall == Approx(1.0).epsilon(1e-12));
  CHECK(m.human_agreement->f1 == Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK_FALSE(aggregate({finished(0.8)}).human_agreement.has_value());
}

TEST_CASE("aggregate: per-turn mean and population variance") {
  RunResult a = finished(0.2);
  RunResult b = finished(0.6);
  const Metrics m = aggregate({a, b});
  REQUIRE(m.per_turn.size() == 2);
  CHECK(m.per_turn[0].mean == Approx(0.5));
  CHECK(m.per_turn[0].variance == Approx(0.0));
  CHECK(m.per_turn[1].mean == Approx(0.4));
  CHECK(m.per_turn[1].variance == Approx(0.04));
  CHECK(per_turn_csv(m).rfind("turn,mean,variance\n0,0.5,0\n", 0) == 0);
}

TEST_CASE("aggregate: lowering the threshold never loses a correct case") {
  std::vector<RunResult> results;
  for (double f : {0.05, 0.3, 0.45, 0.5, 0.51, 0.77, 0.99}) results.push_back(finished(f));
  double previous = 0.0;
  for (double threshold = 1.0; threshold >= 0.0; threshold -= 0.05) {
    const double acc = aggregate(results, threshold).accuracy;
    CHECK(acc >= previous);
    previous = acc;
  }
}

TEST_CASE("case records round-trip and are validated") {
  ReplayCase c = crane_case();
  c.human_confidence = {{0, 0.25}, {2, 0.8}};
  const auto back = parse_cases(format_cases({c}));
  REQUIRE(back.size() == 1);
  CHECK(nlohmann::json(back[0]) == nlohmann::json(c));
  CHECK_NOTHROW(validate_case(c));

  ReplayCase no_target = c;
  no_target.turns.front().tokens = {"wing"};
  CHECK_THROWS_AS(validate_case(no_target), Error);

  ReplayCase long_case = c;
  while (long_case.turns.size() <= kDefaultTurnCap) {
    long_case.turns.push_back({Role::other, {"lake"}, static_cast<TimeIndex>(long_case.turns.size())});
  }
  CHECK_THROWS_AS(validate_case(long_case), Error);
  CHECK_NOTHROW(validate_case(long_case, long_case.turns.size()));

  ReplayCase unordered = c;
  unordered.turns[2].t = 0;
  CHECK_THROWS_AS(validate_case(unordered), Error);

  ReplayCase bad_human = c;
  bad_human.human_confidence = {{0, 1.5}};
  CHECK_THROWS_AS(validate_case(bad_human), Error);
}

TEST_CASE("case files name the failing line") {
  const std::string text = format_cases({crane_case()}) + "\n{\"target_label\": 3}\n";
  try {
    parse_cases(text);
    FAIL("expected a load error");
  } catch (const LoadError& e) {
    CHECK(e.line() == 3);
  }
  const auto cases = parse_cases("\n" + nlohmann::json(crane_case()).dump() + "\n");
  REQUIRE(cases.size() == 1);
  CHECK(cases[0].id == "crane-1");
}

TEST_CASE("modes and tasks parse and map to settings") {
  for (Mode m : {Mode::full, Mode::no_kalman, Mode::fewer_particles, Mode::new_interpretation}) {
    CHECK(parse_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_mode("fast"), Error);
  CHECK(parse_task("estimation") == Task::estimation);
  CHECK(task_for_mode(Mode::new_interpretation) == Task::new_interpretation);
  CHECK(task_for_mode(Mode::no_kalman) == Task::estimation);

  SessionConfig base;
  CHECK(config_for_mode(base, Mode::fewer_particles).particle_multiplier == 10);
  CHECK_FALSE(config_for_mode(base, Mode::no_kalman).kalman_enabled);
  CHECK(config_for_mode(base, Mode::full) == base);
}

TEST_CASE("run_case: full mode on a four-sense label starts at one quarter") {
  const auto r = run_case(crane_case(), small_config(), Mode::full, four_sense_inventory());
  CHECK(r.initial_gold_confidence == 0.25);
  CHECK(r.trajectory.size() == 3);
  for (const auto& rec : r.trajectory) {
    double sum = 0.0;
    for (const auto& [id, c] : rec.report.per_sense) sum += c;
    CHECK(sum == Approx(1.0).epsilon(1e-9));
  }
  CHECK(r.correct == (r.final_gold_confidence > 0.5));
}

TEST_CASE("run_case: the held-out gold starts at zero") {
  auto cfg = small_config();
  cfg.gamma_tau = 1.0;
  const auto r = run_case(crane_case(), cfg, Mode::new_interpretation, four_sense_inventory());
  CHECK(r.initial_gold_confidence == 0.0);
  CHECK(r.initial.per_sense.count("bird") == 0);
  CHECK(r.initial.per_sense.size() == 3);
  for (const auto& rec : r.trajectory) CHECK(rec.report.per_sense.count("bird") == 0);
}

TEST_CASE("run_case: no_kalman keeps every landmark at its seed") {
  auto inv = four_sense_inventory();
  InProcessDriver driver(inv);
  const auto cfg = config_for_mode(small_config(), Mode::no_kalman);
  driver.open(cfg, {"crane"}, {});
  for (const auto& u : crane_case().turns) {
    driver.post(u);
    for (const auto& p : driver.session()->particles()) {
      for (const auto& [label, lands] : p.domain.landmarks) {
        for (const auto& l : lands) {
          if (l.is_new) continue;
          CHECK(l.dist.mean.values == to_nsphere(inv->find_sense(label, l.sense_id)->vector).values);
          CHECK(l.dist.variance == Vec(2, cfg.obs_var0));
        }
      }
    }
  }
}

TEST_CASE("full mode with an uninformative observation equals no_kalman") {
  auto inv = four_sense_inventory();
  auto base = small_config();
  base.sigma_w = 0.0;
  base.gamma_tau = 2.0;
  auto open_cfg = base;
  open_cfg.obs_var = 1e300;
  auto frozen_cfg = config_for_mode(base, Mode::no_kalman);

  const std::vector<ReplayCase> cases = {
      crane_case(),
      {"c2", "crane", "machine", {{Role::other, {"crane", "steel"}, 0},
                                   {Role::other, {"steel", "crane"}, 1},
                                   {Role::other, {"lake"}, 2}}, {}},
      {"c3", "crane", "neck", {{Role::other, {"crane"}, 0},
                                {Role::own, {"wing"}, 1},
                                {Role::other, {"crane", "wing", "lake"}, 2}}, {}}};
  for (const auto& c : cases) {
    CAPTURE(c.id);
    InProcessDriver open(inv), frozen(inv);
    open.open(open_cfg, {"crane"}, {});
    frozen.open(frozen_cfg, {"crane"}, {});
    for (const auto& u : c.turns) {
      open.post(u);
      frozen.post(u);
      const auto& a = open.session()->particles();
      const auto& b = frozen.session()->particles();
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].weight == b[i].weight);
        CHECK(a[i].assignments == b[i].assignments);
        for (const auto& [label, lands] : a[i].domain.landmarks) {
          const auto& other = b[i].domain.landmarks.at(label);
          REQUIRE(lands.size() == other.size());
          for (std::size_t k = 0; k < lands.size(); ++k) {
            CHECK(lands[k].dist.mean.values == other[k].dist.mean.values);
            CHECK(lands[k].dist.variance == other[k].dist.variance);
            CHECK(lands[k].last_update == other[k].last_update);
          }
        }
      }
    }
  }
}

TEST_CASE("new-sense credit goes to created senses nearest the held-out gold") {
  auto inv = four_sense_inventory();
  ConfidenceReport report;
  report.label = "crane";
  report.per_sense = {{"machine", 0.2}, {"new@1", 0.5}, {"new@2", 0.3}};
  std::map<std::string, SenseGaussian> reps;
  auto rep = [](std::string id, Vec direction, bool is_new) {
    return SenseGaussian{std::move(id), {to_nsphere(direction), {1.0, 1.0}}, 1, is_new};
  };
  reps["machine"] = rep("machine", {0.1, 1.0, 0.1}, false);
  reps["new@1"] = rep("new@1", {0.9, 0.2, 0.2}, true);
  reps["new@2"] = rep("new@2", {0.2, 0.9, 0.0}, true);
  CHECK(new_sense_gold_confidence(report, reps, *inv, "crane", "bird") == 0.5);
  CHECK(new_sense_gold_confidence(report, reps, *inv, "crane", "machine") == 0.3);
  CHECK(new_sense_gold_confidence(report, reps, *inv, "crane", "neck") == 0.0);
}

TEST_CASE("synthetic corpus: senses are separated by at least the minimum angle") {
  SynthSpec spec;
  spec.n_cases = 10;
  const SynthCorpus corpus = generate_synthetic(spec);
  CHECK(corpus.inventory.dim() == 16);
  for (std::size_t l = 0; l < spec.n_labels; ++l) {
    const auto& senses = corpus.inventory.senses("amb" + std::to_string(l));
    REQUIRE(senses.size() == 3);
    for (std::size_t i = 0; i < senses.size(); ++i) {
      for (std::size_t j = i + 1; j < senses.size(); ++j) {
        CHECK(vector_angle(senses[i].vector, senses[j].vector) * 180.0 / kPi >= 60.0);
      }
    }
  }
  CHECK(corpus.cases.size() == 10);
  for (const auto& c : corpus.cases) {
    CHECK_NOTHROW(validate_case(c));
    CHECK(c.turns.size() == spec.doc_length);
  }
}

TEST_CASE("synthetic corpus: without noise every content token is in the gold cone") {
  SynthSpec spec;
  spec.noise = 0.0;
  spec.n_cases = 20;
  const SynthCorpus corpus = generate_synthetic(spec);
  for (const auto& c : corpus.cases) {
    const std::string gold = c.target_label + "#" + c.gold_sense;
    const Vec& centre = corpus.topic_centres.at(gold);
    for (const auto& u : c.turns) {
      for (const auto& tok : u.tokens) {
        if (tok == c.target_label) continue;
        CHECK(corpus.word_topic.at(tok) == gold);
        CHECK(vector_angle(*corpus.store.find(tok), centre) * 180.0 / kPi <= spec.cone_deg + 1e-9);
      }
    }
  }
}

TEST_CASE("synthetic corpus: the same seed gives identical bytes") {
  SynthSpec spec;
  spec.n_cases = 8;
  const auto dir = std::filesystem::temp_directory_path() / "ctxsense_synth_test";
  std::filesystem::remove_all(dir);
  write_corpus(generate_synthetic(spec), dir / "a");
  write_corpus(generate_synthetic(spec), dir / "b");
  for (const char* name : {"embeddings.txt", "inventory.txt", "cases.jsonl"}) {
    CAPTURE(name);
    const auto a = read_file(dir / "a" / name);
    CHECK_FALSE(a.empty());
    CHECK(a == read_file(dir / "b" / name));
  }
  spec.seed += 1;
  write_corpus(generate_synthetic(spec), dir / "c");
  CHECK(read_file(dir / "a" / "cases.jsonl") != read_file(dir / "c" / "cases.jsonl"));

  const auto store = load_vectors(dir / "a" / "embeddings.txt");
  const auto inv = load_sense_inventory(dir / "a" / "inventory.txt", store);
  CHECK(inv.senses("amb0").size() == 3);
  CHECK(read_cases(dir / "a" / "cases.jsonl").size() == 8);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic corpus: infeasible separation is refused") {
  SynthSpec spec;
  spec.dim = 2;
  spec.senses_per_label = 5;
  spec.min_separation_deg = 90.0;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec = SynthSpec{};
  spec.senses_per_label = 1;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("synth spec JSON rejects unknown fields") {
  SynthSpec spec;
  spec.noise = 0.3;
  CHECK(nlohmann::json(nlohmann::json(spec).get<SynthSpec>()) == nlohmann::json(spec));
  CHECK_THROWS_AS(nlohmann::json({{"dims", 3}}).get<SynthSpec>(), ConfigError);
}

TEST_CASE("grid expansion is a cartesian product over the base config") {
  SessionConfig base;
  base.seed = 9;
  const auto grid = nlohmann::json::parse(R"({"lambda_z": [0.1, 0.2, 0.3], "t_alpha": [1, 2]})");
  const auto configs = expand_grid(base, grid);
  REQUIRE(configs.size() == 6);
  CHECK(configs[0].lambda_z == 0.1);
  CHECK(configs[0].t_alpha == 1);
  CHECK(configs[1].t_alpha == 2);
  CHECK(configs[5].lambda_z == 0.3);
  for (const auto& c : configs) CHECK(c.seed == 9);
  CHECK_THROWS_AS(expand_grid(base, nlohmann::json::parse(R"({"lambda_z": []})")), ConfigError);
  CHECK_THROWS_AS(expand_grid(base, nlohmann::json::parse(R"({"lambda_z": [2.0]})")), ConfigError);
  CHECK_THROWS_AS(expand_grid(base, nlohmann::json::parse(R"({"speed": [1]})")), ConfigError);
}
