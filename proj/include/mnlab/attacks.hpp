#pragma once

/// Best-iterate PGD per norm, the multi-steepest-descent (MSD) attack over
/// the union of three balls, and bisection estimates of robust radii.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mnlab/error.hpp"
#include "mnlab/network.hpp"
#include "mnlab/parallel.hpp"
#include "mnlab/projections.hpp"
#include "mnlab/tensor.hpp"

namespace mnlab {

struct ThreatSpec {
  Norm p = Norm::Linf;
  double eps = 0.0;
};

/// Set of lp-balls, at most one per norm.
class ThreatUnion {
 public:
  ThreatUnion() = default;
  ThreatUnion(std::initializer_list<ThreatSpec> specs) : ThreatUnion(std::vector<ThreatSpec>(specs)) {}
  explicit ThreatUnion(std::vector<ThreatSpec> specs) : specs_(std::move(specs)) {
    if (specs_.empty()) throw InvalidConfig("threat union must not be empty");
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      if (!(specs_[i].eps > 0.0)) {
        throw InvalidConfig("radius for " + to_string(specs_[i].p) + " must be positive");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (specs_[i].p == specs_[j].p) {
          throw InvalidConfig("duplicate norm " + to_string(specs_[i].p) + " in threat union");
        }
      }
    }
    // canonical order l∞, l2, l1
    std::sort(specs_.begin(), specs_.end(), [](const ThreatSpec& a, const ThreatSpec& b) {
      return static_cast<int>(a.p) < static_cast<int>(b.p);
    });
  }

  [[nodiscard]] const std::vector<ThreatSpec>& specs() const { return specs_; }
  [[nodiscard]] std::size_t size() const { return specs_.size(); }
  [[nodiscard]] bool has(Norm p) const { return find(p).has_value(); }
  [[nodiscard]] std::optional<ThreatSpec> find(Norm p) const {
    for (const auto& s : specs_) {
      if (s.p == p) return s;
    }
    return std::nullopt;
  }
  [[nodiscard]] ThreatSpec at(Norm p) const {
    auto s = find(p);
    if (!s) throw InvalidConfig("threat union has no " + to_string(p) + " ball");
    return *s;
  }

 private:
  std::vector<ThreatSpec> specs_;
};

struct AttackConfig {
  int n_steps = 10;
  /// Fixed step size; when empty the per-norm rule applies
  /// (l∞: eps/4, l2: eps/3, l1: eps/2).
  std::optional<double> step_size;
  int n_restarts = 2;
  /// Fraction of coordinates moved by an l1 step at the first iteration;
  /// decays linearly to k_fraction_final at the last one.
  double k_fraction = 0.05;
  double k_fraction_final = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_steps < 1) throw InvalidConfig("attack.steps must be >= 1");
    if (n_restarts < 1) throw InvalidConfig("attack.restarts must be >= 1");
    if (step_size && !(*step_size > 0.0)) throw InvalidConfig("attack.step_size must be positive");
    if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw InvalidConfig("attack.k_fraction must lie in (0, 1]");
    if (!(k_fraction_final > 0.0 && k_fraction_final <= 1.0)) {
      throw InvalidConfig("attack.k_fraction_final must lie in (0, 1]");
    }
  }

  [[nodiscard]] double step_for(const ThreatSpec& t) const {
    if (step_size) return *step_size;
    switch (t.p) {
      case Norm::Linf: return t.eps / 4.0;
      case Norm::L2: return t.eps / 3.0;
      case Norm::L1: return t.eps / 2.0;
    }
    return t.eps;
  }

  [[nodiscard]] double k_at(int step) const {
    if (n_steps <= 1) return k_fraction;
    const double s = static_cast<double>(step) / static_cast<double>(n_steps - 1);
    return k_fraction + s * (k_fraction_final - k_fraction);
  }
};

struct AttackResult {
  Tensor adversarial_inputs;
  std::vector<std::uint8_t> success;  ///< best iterate misclassified
  std::vector<double> final_loss;     ///< loss of the best iterate

  [[nodiscard]] std::size_t n_success() const {
    return static_cast<std::size_t>(std::count(success.begin(), success.end(), 1));
  }
};

/// Per-step record of the MSD attack for one batch.
struct MsdTrace {
  /// [step][example] -> candidate losses in (l∞, l2, l1) order.
  std::vector<std::vector<std::array<double, 3>>> candidate_losses;
  /// [step][example] -> chosen norm index.
  std::vector<std::vector<std::uint8_t>> chosen;

  [[nodiscard]] std::array<std::size_t, 3> counts() const {
    std::array<std::size_t, 3> c{0, 0, 0};
    for (const auto& step : chosen) {
      for (auto k : step) ++c[k];
    }
    return c;
  }
};

namespace detail {

inline int argmax_row(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Iterates are ranked misclassified-first, then by loss.
inline bool better_iterate(bool mis_a, double loss_a, bool mis_b, double loss_b) {
  if (mis_a != mis_b) return mis_a;
  return loss_a > loss_b;
}

inline void random_start(Norm p, double eps, std::mt19937_64& rng, std::span<double> out) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto d = static_cast<double>(out.size());
  switch (p) {
    case Norm::Linf:
      for (double& v : out) v = eps * (2.0 * unit(rng) - 1.0);
      return;
    case Norm::L2: {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& v : out) v = normal(rng);
      const double n = norm_of(out, Norm::L2);
      const double r = eps * std::pow(unit(rng), 1.0 / d);
      for (double& v : out) v = n > 0.0 ? v / n * r : 0.0;
      return;
    }
    case Norm::L1: {
      std::exponential_distribution<double> expo(1.0);
      double s = 0.0;
      for (double& v : out) s += (v = expo(rng));
      const double r = eps * unit(rng);
      for (double& v : out) v = (unit(rng) < 0.5 ? -1.0 : 1.0) * v / s * r;
      return;
    }
  }
}

// Zeroes gradient coordinates that point out of the box at its boundary, so
// sparse l1 steps are not wasted on coordinates that cannot move.
inline void mask_blocked(std::span<const double> x_adv, std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if ((x_adv[i] >= 1.0 && grad[i] > 0.0) || (x_adv[i] <= 0.0 && grad[i] < 0.0)) grad[i] = 0.0;
  }
}

struct BestTracker {
  Tensor best_x;
  std::vector<double> best_loss;
  std::vector<std::uint8_t> best_mis;
  std::vector<std::uint8_t> seen;

  explicit BestTracker(const Tensor& clean)
      : best_x(clean),
        best_loss(clean.rows(), 0.0),
        best_mis(clean.rows(), 0),
        seen(clean.rows(), 0) {}

  void offer(std::size_t r, std::span<const double> x, double loss, bool mis) {
    if (!seen[r] || better_iterate(mis, loss, best_mis[r] != 0, best_loss[r])) {
      seen[r] = 1;
      best_loss[r] = loss;
      best_mis[r] = mis ? 1 : 0;
      std::copy(x.begin(), x.end(), best_x.row(r).begin());
    }
  }
};

inline void offer_all(BestTracker& best, const Tensor& x_adv, const Tensor& logits,
                      std::span<const double> losses, std::span<const int> labels) {
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const bool mis = argmax_row(logits.row(r)) != labels[r];
    best.offer(r, x_adv.row(r), losses[r], mis);
  }
}

inline AttackResult finish(BestTracker& best) {
  AttackResult out;
  out.adversarial_inputs = std::move(best.best_x);
  out.success = std::move(best.best_mis);
  out.final_loss = std::move(best.best_loss);
  return out;
}

// PGD on rows [0, n) of `clean`; `index_offset` is the global index of row 0.
inline AttackResult pgd_chunk(const Network& net, const Tensor& clean, std::span<const int> labels,
                              const ThreatSpec& threat, const AttackConfig& cfg,
                              std::size_t index_offset) {
  const std::size_t n = clean.rows();
  const std::size_t d = clean.cols();
  const double eta = cfg.step_for(threat);
  BestTracker best(clean);
  Tensor delta = Tensor::matrix(n, d);
  Tensor x_adv = clean;
  std::vector<double> g(d);
  std::vector<double> step(d);

  auto refresh_x = [&] {
    for (std::size_t i = 0; i < x_adv.size(); ++i) x_adv[i] = clean[i] + delta[i];
  };

  for (int restart = 0; restart < cfg.n_restarts; ++restart) {
    if (restart == 0) {
      std::fill(delta.data().begin(), delta.data().end(), 0.0);
    } else {
      for (std::size_t r = 0; r < n; ++r) {
        std::mt19937_64 rng(mix_seed(cfg.seed ^ (index_offset + r), static_cast<std::uint64_t>(restart)));
        random_start(threat.p, threat.eps, rng, delta.row(r));
        project_ball_box_inplace(threat.p, clean.row(r), delta.row(r), threat.eps);
      }
    }
    refresh_x();
    for (int t = 0; t < cfg.n_steps; ++t) {
      const InputGradients ig = input_gradients(net, x_adv, labels);
      offer_all(best, x_adv, ig.logits, ig.losses, labels);
      const double k = cfg.k_at(t);
      for (std::size_t r = 0; r < n; ++r) {
        const auto gr = ig.grad.row(r);
        std::copy(gr.begin(), gr.end(), g.begin());
        if (threat.p == Norm::L1) mask_blocked(x_adv.row(r), g);
        ascent_step_into(threat.p, g, k, step);
        auto dr = delta.row(r);
        for (std::size_t i = 0; i < d; ++i) dr[i] += eta * step[i];
        project_ball_box_inplace(threat.p, clean.row(r), dr, threat.eps);
      }
      refresh_x();
    }
    const Tensor logits = forward(net, x_adv);
    const auto losses = cross_entropy_per_example(logits, labels);
    offer_all(best, x_adv, logits, losses, labels);
  }
  return finish(best);
}

inline AttackResult msd_chunk(const Network& net, const Tensor& clean, std::span<const int> labels,
                              const ThreatUnion& threats, const AttackConfig& cfg,
                              std::size_t index_offset, MsdTrace* trace) {
  const std::size_t n = clean.rows();
  const std::size_t d = clean.cols();
  const std::array<ThreatSpec, 3> specs{threats.at(Norm::Linf), threats.at(Norm::L2),
                                        threats.at(Norm::L1)};
  BestTracker best(clean);
  Tensor delta = Tensor::matrix(n, d);
  Tensor x_adv = clean;
  std::array<Tensor, 3> cand_delta;
  std::array<Tensor, 3> cand_x;
  std::vector<double> g(d);
  std::vector<double> step(d);

  for (int restart = 0; restart < cfg.n_restarts; ++restart) {
    if (restart == 0) {
      std::fill(delta.data().begin(), delta.data().end(), 0.0);
    } else {
      const ThreatSpec& s = specs[static_cast<std::size_t>(restart - 1) % 3];
      for (std::size_t r = 0; r < n; ++r) {
        std::mt19937_64 rng(mix_seed(cfg.seed ^ (index_offset + r), static_cast<std::uint64_t>(restart)));
        random_start(s.p, s.eps, rng, delta.row(r));
        project_ball_box_inplace(s.p, clean.row(r), delta.row(r), s.eps);
      }
    }
    for (std::size_t i = 0; i < x_adv.size(); ++i) x_adv[i] = clean[i] + delta[i];
    {
      const Tensor logits = forward(net, x_adv);
      const auto losses = cross_entropy_per_example(logits, labels);
      offer_all(best, x_adv, logits, losses, labels);
    }
    for (int t = 0; t < cfg.n_steps; ++t) {
      const InputGradients ig = input_gradients(net, x_adv, labels);
      const double k = cfg.k_at(t);
      std::array<std::vector<double>, 3> cand_losses;
      std::array<Tensor, 3> cand_logits;
      for (std::size_t c = 0; c < 3; ++c) {
        cand_delta[c] = delta;
        cand_x[c] = clean;
        const double eta = cfg.step_for(specs[c]);
        for (std::size_t r = 0; r < n; ++r) {
          const auto gr = ig.grad.row(r);
          std::copy(gr.begin(), gr.end(), g.begin());
          if (specs[c].p == Norm::L1) mask_blocked(x_adv.row(r), g);
          ascent_step_into(specs[c].p, g, k, step);
          auto dr = cand_delta[c].row(r);
          for (std::size_t i = 0; i < d; ++i) dr[i] += eta * step[i];
          project_ball_box_inplace(specs[c].p, clean.row(r), dr, specs[c].eps);
        }
        for (std::size_t i = 0; i < x_adv.size(); ++i) cand_x[c][i] = clean[i] + cand_delta[c][i];
        cand_logits[c] = forward(net, cand_x[c]);
        cand_losses[c] = cross_entropy_per_example(cand_logits[c], labels);
      }
      std::vector<std::array<double, 3>> step_losses(n);
      std::vector<std::uint8_t> step_choice(n);
      for (std::size_t r = 0; r < n; ++r) {
        std::size_t pick = 0;
        for (std::size_t c = 1; c < 3; ++c) {
          if (cand_losses[c][r] > cand_losses[pick][r]) pick = c;
        }
        step_losses[r] = {cand_losses[0][r], cand_losses[1][r], cand_losses[2][r]};
        step_choice[r] = static_cast<std::uint8_t>(pick);
        std::copy(cand_delta[pick].row(r).begin(), cand_delta[pick].row(r).end(), delta.row(r).begin());
        std::copy(cand_x[pick].row(r).begin(), cand_x[pick].row(r).end(), x_adv.row(r).begin());
        const bool mis = argmax_row(cand_logits[pick].row(r)) != labels[r];
        best.offer(r, x_adv.row(r), cand_losses[pick][r], mis);
      }
      if (trace) {
        trace->candidate_losses.push_back(std::move(step_losses));
        trace->chosen.push_back(std::move(step_choice));
      }
    }
  }
  return finish(best);
}

inline void check_batch(const Network& net, const Batch& batch) {
  batch.validate(net.num_classes());
  if (batch.dim() != net.input_dim()) throw ShapeMismatch("batch dim does not match network");
}

template <typename ChunkFn>
AttackResult run_chunked(const Batch& batch, ChunkFn&& chunk_fn) {
  const std::size_t n = batch.size();
  AttackResult out{batch.inputs, std::vector<std::uint8_t>(n, 0), std::vector<double>(n, 0.0)};
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    std::vector<std::size_t> idx(e - b);
    for (std::size_t i = b; i < e; ++i) idx[i - b] = i;
    const Batch part = batch.subset(idx);
    AttackResult r = chunk_fn(part, b);
    for (std::size_t i = b; i < e; ++i) {
      const auto src = r.adversarial_inputs.row(i - b);
      std::copy(src.begin(), src.end(), out.adversarial_inputs.row(i).begin());
      out.success[i] = r.success[i - b];
      out.final_loss[i] = r.final_loss[i - b];
    }
  });
  return out;
}

}  // namespace detail

/// Best-iterate PGD inside B_p(eps) ∩ [0,1]^d. Restart 0 starts at the clean
/// input, later restarts at a seeded random point of the ball. Example i
/// draws its randomness from (cfg.seed XOR (index_offset + i)), so results do
/// not depend on how the batch is split across threads.
inline AttackResult pgd_attack(const Network& net, const Batch& batch, const ThreatSpec& threat,
                               const AttackConfig& cfg, std::size_t index_offset = 0) {
  cfg.validate();
  if (!(threat.eps > 0.0)) throw InvalidConfig("attack radius must be positive");
  detail::check_batch(net, batch);
  return detail::run_chunked(batch, [&](const Batch& part, std::size_t begin) {
    return detail::pgd_chunk(net, part.inputs, part.labels, threat, cfg, index_offset + begin);
  });
}

/// MSD: per iteration one input gradient, three candidate steps (each
/// projected onto its own ball ∩ box), keep the candidate with the highest
/// loss; ties go to the earlier norm in (l∞, l2, l1).
inline AttackResult msd_attack(const Network& net, const Batch& batch, const ThreatUnion& threats,
                               const AttackConfig& cfg, MsdTrace* trace = nullptr,
                               std::size_t index_offset = 0) {
  cfg.validate();
  for (Norm p : kAllNorms) {
    if (!threats.has(p)) throw InvalidConfig("msd_attack needs a " + to_string(p) + " ball");
  }
  detail::check_batch(net, batch);
  if (trace) {
    // Traces are recorded in one pass so step/example indices stay aligned.
    *trace = MsdTrace{};
    return detail::msd_chunk(net, batch.inputs, batch.labels, threats, cfg, index_offset, trace);
  }
  return detail::run_chunked(batch, [&](const Batch& part, std::size_t begin) {
    return detail::msd_chunk(net, part.inputs, part.labels, threats, cfg, index_offset + begin,
                             nullptr);
  });
}

struct RadiusTrace {
  double radius = 0.0;
  /// Every attacked radius and whether the attack succeeded there.
  std::map<double, bool> evaluations;
};

/// Bisection on the radius: smallest eps (within tol) at which the attack
/// succeeds, eps_hi if it never does, 0 for a misclassified input.
inline RadiusTrace robust_radius_trace(const Network& net, std::span<const double> x, int label,
                                       Norm p, double eps_hi, double tol, const AttackConfig& cfg) {
  if (!(eps_hi > tol && tol > 0.0)) throw InvalidConfig("robust_radius needs eps_hi > tol > 0");
  Batch one{Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())), {label}};
  detail::check_batch(net, one);
  RadiusTrace out;
  if (predict(net, one.inputs)[0] != label) return out;

  auto succeeds = [&](double eps) {
    auto it = out.evaluations.find(eps);
    if (it != out.evaluations.end()) return it->second;
    const bool s = pgd_attack(net, one, {p, eps}, cfg).success[0] != 0;
    out.evaluations.emplace(eps, s);
    return s;
  };
  if (!succeeds(eps_hi)) {
    out.radius = eps_hi;
    return out;
  }
  double lo = 0.0;
  double hi = eps_hi;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (succeeds(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  out.radius = hi;
  return out;
}

inline double robust_radius(const Network& net, std::span<const double> x, int label, Norm p,
                            double eps_hi, double tol, const AttackConfig& cfg) {
  return robust_radius_trace(net, x, label, p, eps_hi, tol, cfg).radius;
}

}  // namespace mnlab
