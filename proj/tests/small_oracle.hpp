#pragma once

// Straight-line reimplementation of one small session (d = 2, one target
// label with two senses, two particles, three partner turns, no noise).
// In two dimensions every direction is a single azimuth, so all of the
// weighting arithmetic reduces to scalar angle code written out here
// without the library's geometry or filter code.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ctxsense/engine.hpp"

namespace ctxsense::testing {

struct SmallCase {
  SessionConfig cfg;
  std::shared_ptr<const SenseInventory> inventory;
  std::vector<Utterance> turns;
};

inline SmallCase small_case() {
  SmallCase c;
  c.cfg.particle_multiplier = 1;
  c.cfg.lambda_u = 0.5;
  c.cfg.lambda_z = 0.5;
  c.cfg.lambda_w = 0.5;
  c.cfg.sigma_u = 0.0;
  c.cfg.sigma_z = 0.0;
  c.cfg.sigma_w = 0.0;
  c.cfg.t_alpha = 1;
  c.cfg.epsilon = 1e-6;
  c.cfg.lambda_w2 = 0.1;
  c.cfg.eta_tau = 3.0;
  c.cfg.gamma_tau = 5.0;
  c.cfg.obs_var0 = 2.0;
  c.cfg.obs_var = 2.0;
  c.cfg.seed = 11;

  auto inv = std::make_shared<SenseInventory>(2);
  inv->add_sense("bank", "money", {1.0, 0.0});
  inv->add_sense("bank", "river", {0.0, 2.0});
  inv->add_sense("loan", "", {std::cos(0.2), std::sin(0.2)});
  inv->add_sense("fee", "", {1.5 * std::cos(-0.3), 1.5 * std::sin(-0.3)});
  c.inventory = inv;

  c.turns = {{Role::other, {"bank", "loan"}, 0},
             {Role::other, {"fee", "loan"}, 1},
             {Role::other, {"bank", "fee"}, 2}};
  return c;
}

struct OracleTurn {
  std::vector<std::string> assignment;  // per pre-resample particle
  std::vector<double> base_weight;      // distance-based weight per pre-resample particle
  std::vector<double> new_weight;       // new-sense weight, or -1 when not a new-sense hypothesis
  std::vector<double> normalized;       // what resampling sees
  std::map<std::string, double> confidence;
};

namespace oracle_detail {

constexpr double kPi = 3.14159265358979323846;

inline double azimuth(double x, double y) {
  double a = std::atan2(y, x);
  if (a < 0.0) a += 2.0 * kPi;
  return a;
}

inline double wrap(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline double wrap_positive(double a) {
  while (a >= 2.0 * kPi) a -= 2.0 * kPi;
  while (a < 0.0) a += 2.0 * kPi;
  return a;
}

struct Land {
  std::string label;
  std::string id;
  double mu = 0.0;
  double var = 0.0;
  long long last = -1;  // -1: never
  bool is_new = false;
};

struct P {
  double x = 0.0;
  double y = 0.0;
  std::vector<Land> lands;  // ordered by (label, insertion)
  std::string bank;         // assignment, "" if none
  double w = 0.0;
  double last_w = 0.0;

  Land* find(const std::string& label, const std::string& id) {
    for (auto& l : lands) {
      if (l.label == label && l.id == id) return &l;
    }
    return nullptr;
  }
  bool has_new() const {
    return std::any_of(lands.begin(), lands.end(), [](const Land& l) { return l.is_new; });
  }
};

inline bool recent(const Land& l, long long t, long long window) {
  return l.last >= 0 && l.last <= t && t - l.last <= window;
}

}  // namespace oracle_detail

inline std::vector<OracleTurn> run_small_oracle() {
  using namespace oracle_detail;
  const double lam_z = 0.5, lam_w = 0.5, eps = 1e-6, lam_w2 = 0.1, eta_tau = 3.0, gamma_tau = 5.0;
  const double var0 = 2.0, obs_var = 2.0;
  const long long window = 1;
  const std::size_t M = 2;

  struct Word {
    double x, y;
  };
  const Word money{1.0, 0.0};
  const Word river{0.0, 2.0};
  const Word loan{std::cos(0.2), std::sin(0.2)};
  const Word fee{1.5 * std::cos(-0.3), 1.5 * std::sin(-0.3)};
  const Word bank_surface{0.5 * (money.x + river.x), 0.5 * (money.y + river.y)};

  auto kalman = [&](Land& l, double obs, long long stamp) {
    const double k = l.var / (l.var + obs_var);
    l.mu = wrap_positive(l.mu + k * wrap(obs - l.mu));
    l.var = (1.0 - k) * l.var;
    l.last = stamp;
  };
  // Observation point (1 - lam_w) x + lam_w anchor, no noise.
  auto obs_angle = [&](const P& p, double ax, double ay) {
    return azimuth((1.0 - lam_w) * p.x + lam_w * ax, (1.0 - lam_w) * p.y + lam_w * ay);
  };
  auto base_weight = [&](const P& p, long long t) {
    const double here = azimuth(p.x, p.y);
    double sum = 0.0;
    int n = 0;
    for (const auto& l : p.lands) {
      if (!recent(l, t, window)) continue;
      const double d = std::fabs(wrap(here - l.mu)) / std::sqrt(l.var);
      sum += std::exp(-static_cast<double>(t - l.last) / eta_tau) * d;
      ++n;
    }
    if (n == 0) return 0.0;
    return std::max(0.0, -std::log(sum / n + eps));
  };
  auto kl = [](const Land& p, const Land& q) {
    const double d = wrap(q.mu - p.mu);
    const double v = 0.5 * (p.var / q.var + d * d / q.var - 1.0 + std::log(q.var / p.var));
    return std::max(0.0, v);
  };
  auto new_weight = [&](const P& p, long long t) {
    const Land* fresh = nullptr;
    for (const auto& l : p.lands) {
      if (l.is_new && l.id == p.bank) fresh = &l;
    }
    const double gamma = t <= 0 ? 0.0 : 1.0 - std::exp(-static_cast<double>(t) / gamma_tau);
    double kl_sum = 0.0;
    int existing = 0;
    for (const auto& l : p.lands) {
      if (l.label == "bank" && !l.is_new) {
        kl_sum += kl(l, *fresh);
        ++existing;
      }
    }
    const double w = base_weight(p, t);
    return std::max(0.0, gamma * (w + lam_w2 * std::log(kl_sum / existing + eps)));
  };
  auto ensure_plain = [&](P& p, const std::string& label, const Word& v) {
    if (!p.find(label, "")) p.lands.push_back({label, "", azimuth(v.x, v.y), var0, -1, false});
  };
  auto sort_lands = [](P& p) {
    std::stable_sort(p.lands.begin(), p.lands.end(),
                     [](const Land& a, const Land& b) { return a.label < b.label; });
  };

  // Initial state: context at the sense mean, two seeded senses.
  P seed;
  seed.x = bank_surface.x;
  seed.y = bank_surface.y;
  seed.lands.push_back({"bank", "money", azimuth(money.x, money.y), var0, -1, false});
  seed.lands.push_back({"bank", "river", azimuth(river.x, river.y), var0, -1, false});
  seed.w = seed.last_w = 0.5;
  std::vector<P> ps(M, seed);
  std::mt19937_64 rng(11);

  struct Turn {
    long long t;
    bool bank;
    std::vector<std::pair<std::string, Word>> plain;  // sorted by label
  };
  const std::vector<Turn> turns = {
      {0, true, {{"loan", loan}}},
      {1, false, {{"fee", fee}, {"loan", loan}}},
      {2, true, {{"fee", fee}}},
  };

  std::vector<OracleTurn> out;
  for (const auto& turn : turns) {
    const long long t = turn.t;
    // Plain words of this turn, then in-window plain words from before.
    for (auto& p : ps) {
      for (const auto& [label, v] : turn.plain) {
        ensure_plain(p, label, v);
        sort_lands(p);
        kalman(*p.find(label, ""), obs_angle(p, v.x, v.y), t);
      }
      for (auto& l : p.lands) {
        if (l.label == "bank" || !recent(l, t, window) || l.last == t) continue;
        const bool mentioned = std::any_of(turn.plain.begin(), turn.plain.end(),
                                           [&](const auto& pw) { return pw.first == l.label; });
        if (mentioned) continue;
        const Word& v = l.label == "loan" ? loan : fee;
        kalman(l, obs_angle(p, v.x, v.y), l.last);
      }
    }

    // A new-sense branch behind every particle that has none yet.
    std::vector<P> pop;
    for (const auto& p : ps) {
      pop.push_back(p);
      if (p.has_new()) continue;
      P b = p;
      double s = 0.0, c = 0.0, var = 0.0;
      int n = 0;
      for (const auto& l : p.lands) {
        if (!recent(l, t, window)) continue;
        s += std::sin(l.mu);
        c += std::cos(l.mu);
        var += l.var;
        ++n;
      }
      const double ctx = azimuth(p.x, p.y);
      s += std::sin(ctx);
      c += std::cos(ctx);
      const std::string id = "new@" + std::to_string(t);
      b.lands.push_back({"bank", id, azimuth(c, s), n ? var / n : var0, t, true});
      sort_lands(b);
      b.bank = id;
      pop.push_back(b);
    }

    // Branch on the ambiguous label.
    if (turn.bank) {
      const std::string fresh = "new@" + std::to_string(t);
      std::vector<P> next;
      for (auto& p : pop) {
        if (p.bank == fresh) {
          Land& l = *p.find("bank", fresh);
          const double r = std::hypot(p.x, p.y);
          kalman(l, obs_angle(p, r * std::cos(l.mu), r * std::sin(l.mu)), t);
          next.push_back(p);
          continue;
        }
        const auto options = p.lands;
        for (const auto& opt : options) {
          if (opt.label != "bank") continue;
          P child = p;
          child.bank = opt.id;
          Land& l = *child.find("bank", opt.id);
          double ax, ay;
          if (opt.id == "money") {
            ax = money.x, ay = money.y;
          } else if (opt.id == "river") {
            ax = river.x, ay = river.y;
          } else {
            const double r = std::hypot(child.x, child.y);
            ax = r * std::cos(l.mu), ay = r * std::sin(l.mu);
          }
          kalman(l, obs_angle(child, ax, ay), t);
          next.push_back(child);
        }
      }
      pop = std::move(next);
    }

    // Context update with the utterance mean (labels sorted, equal shares).
    std::vector<Word> words;
    if (turn.bank) words.push_back(bank_surface);
    for (const auto& [label, v] : turn.plain) words.push_back(v);
    double mx = 0.0, my = 0.0;
    for (const auto& w : words) {
      mx += w.x / static_cast<double>(words.size());
      my += w.y / static_cast<double>(words.size());
    }
    for (auto& p : pop) {
      p.x = (1.0 - lam_z) * p.x + lam_z * mx;
      p.y = (1.0 - lam_z) * p.y + lam_z * my;
    }

    OracleTurn rec;
    double total = 0.0;
    for (auto& p : pop) {
      const double w = base_weight(p, t);
      const Land* assigned = p.bank.empty() ? nullptr : p.find("bank", p.bank);
      const double wn = assigned && assigned->is_new ? new_weight(p, t) : -1.0;
      rec.assignment.push_back(p.bank);
      rec.base_weight.push_back(w);
      rec.new_weight.push_back(wn);
      p.w = wn >= 0.0 ? std::min(w, wn) : w;
      total += p.w;
    }
    for (auto& p : pop) {
      p.w /= total;
      p.last_w = p.w;
      rec.normalized.push_back(p.w);
    }

    // Systematic resampling back to M with the same offset draw.
    std::uniform_real_distribution<double> offset(0.0, 1.0 / static_cast<double>(M));
    const double u0 = offset(rng);
    std::vector<P> kept;
    for (std::size_t m = 0; m < M; ++m) {
      const double u = u0 + static_cast<double>(m) / static_cast<double>(M);
      double cum = 0.0;
      std::size_t pick = pop.size() - 1;
      while (pop[pick].w == 0.0) --pick;
      for (std::size_t i = 0; i < pop.size(); ++i) {
        cum += pop[i].w;
        if (pop[i].w > 0.0 && cum > u) {
          pick = i;
          break;
        }
      }
      kept.push_back(pop[pick]);
      kept.back().w = 1.0 / static_cast<double>(M);
    }
    ps = std::move(kept);

    // Confidence: max weight per hypothesis over the survivors.
    std::map<std::string, double> group;
    for (const auto& p : ps) group[p.bank] = std::max(group[p.bank], p.last_w);
    double denom = 0.0;
    for (const auto& [id, w] : group) denom += w;
    rec.confidence = {{"money", 0.0}, {"river", 0.0}};
    for (const auto& [id, w] : group) rec.confidence[id] = w / denom;
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace ctxsense::testing
