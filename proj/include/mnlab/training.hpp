#pragma once

/// Adversarial training: single-norm AT, SAT, AVG, MAX, MSD and E-AT (with
/// its uniform-sampling ablation), SGD with momentum and weight decay,
/// learning-rate schedules and fine-tuning.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mnlab/attacks.hpp"
#include "mnlab/error.hpp"
#include "mnlab/evaluation.hpp"
#include "mnlab/network.hpp"

namespace mnlab {

enum class SchemeKind { Single, SAT, AVG, MAX, MSD, EAT, EATUniform };

struct Scheme {
  SchemeKind kind = SchemeKind::Single;
  Norm p = Norm::Linf;  ///< only meaningful for Single

  static Scheme single(Norm p) { return {SchemeKind::Single, p}; }

  bool operator==(const Scheme&) const = default;
};

inline std::string to_string(const Scheme& s) {
  switch (s.kind) {
    case SchemeKind::Single: return "single-" + to_string(s.p);
    case SchemeKind::SAT: return "sat";
    case SchemeKind::AVG: return "avg";
    case SchemeKind::MAX: return "max";
    case SchemeKind::MSD: return "msd";
    case SchemeKind::EAT: return "eat";
    case SchemeKind::EATUniform: return "eat-uniform";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s.rfind("single-", 0) == 0) return Scheme::single(parse_norm(s.substr(7)));
  if (s == "sat") return {SchemeKind::SAT};
  if (s == "avg") return {SchemeKind::AVG};
  if (s == "max") return {SchemeKind::MAX};
  if (s == "msd") return {SchemeKind::MSD};
  if (s == "eat") return {SchemeKind::EAT};
  if (s == "eat-uniform") return {SchemeKind::EATUniform};
  throw InvalidConfig("unknown scheme '" + s +
                      "' (single-linf|single-l2|single-l1|sat|avg|max|msd|eat|eat-uniform)");
}

/// Throws unless `threats` contains every ball the scheme attacks with.
inline void check_scheme_union(const Scheme& s, const ThreatUnion& threats) {
  auto need = [&](Norm p) {
    if (!threats.has(p)) {
      throw InvalidConfig("scheme " + to_string(s) + " needs a " + to_string(p) + " radius");
    }
  };
  switch (s.kind) {
    case SchemeKind::Single: need(s.p); break;
    case SchemeKind::EAT:
    case SchemeKind::EATUniform:
      need(Norm::Linf);
      need(Norm::L1);
      break;
    default:
      for (Norm p : kAllNorms) need(p);
  }
}

// ---- learning rate ----

struct LrSchedule {
  enum class Kind { Piecewise, Cyclic, ThirdsDrop };
  Kind kind = Kind::Piecewise;
  double initial = 0.05;  ///< peak value for Cyclic
  int drop_epoch = 70;    ///< Piecewise only
  double factor = 10.0;   ///< Piecewise only

  static LrSchedule piecewise(double initial, int drop_epoch, double factor = 10.0) {
    return {Kind::Piecewise, initial, drop_epoch, factor};
  }
  static LrSchedule cyclic(double max_lr) { return {Kind::Cyclic, max_lr, 0, 1.0}; }
  static LrSchedule thirds(double initial) { return {Kind::ThirdsDrop, initial, 0, 10.0}; }
};

inline std::string to_string(LrSchedule::Kind k) {
  switch (k) {
    case LrSchedule::Kind::Piecewise: return "piecewise";
    case LrSchedule::Kind::Cyclic: return "cyclic";
    case LrSchedule::Kind::ThirdsDrop: return "thirds";
  }
  return "?";
}

inline LrSchedule::Kind parse_lr_kind(const std::string& s) {
  if (s == "piecewise") return LrSchedule::Kind::Piecewise;
  if (s == "cyclic") return LrSchedule::Kind::Cyclic;
  if (s == "thirds") return LrSchedule::Kind::ThirdsDrop;
  throw InvalidConfig("unknown lr schedule '" + s + "' (piecewise|cyclic|thirds)");
}

/// Learning rate for step `step_in_epoch` of `epoch`, with `steps_per_epoch`
/// optimizer steps per epoch and `epochs` epochs in total.
inline double lr_at(const LrSchedule& s, int epoch, int step_in_epoch, int steps_per_epoch,
                    int epochs) {
  const long long total = static_cast<long long>(steps_per_epoch) * epochs;
  const long long t = static_cast<long long>(epoch) * steps_per_epoch + step_in_epoch;
  switch (s.kind) {
    case LrSchedule::Kind::Piecewise:
      return epoch >= s.drop_epoch ? s.initial / s.factor : s.initial;
    case LrSchedule::Kind::Cyclic: {
      if (total <= 0) return 0.0;
      const double half = static_cast<double>(total) / 2.0;
      const double td = static_cast<double>(t);
      return td <= half ? s.initial * td / half : s.initial * (static_cast<double>(total) - td) / half;
    }
    case LrSchedule::Kind::ThirdsDrop: {
      if (total <= 0) return s.initial;
      const long long third = std::min<long long>(2, (3 * t) / total);
      return third == 0 ? s.initial : (third == 1 ? s.initial / 10.0 : s.initial / 100.0);
    }
  }
  return s.initial;
}

// ---- E-AT bookkeeping ----

struct RunningRobustError {
  std::array<double, 3> sum_err{0.0, 0.0, 0.0};
  std::array<std::size_t, 3> count{0, 0, 0};

  void add(Norm p, double batch_error) {
    sum_err[static_cast<std::size_t>(p)] += batch_error;
    ++count[static_cast<std::size_t>(p)];
  }
  [[nodiscard]] double rerr(Norm p) const {
    const auto k = static_cast<std::size_t>(p);
    return count[k] > 0 ? sum_err[k] / static_cast<double>(count[k]) : 1.0;
  }
  void reset() { *this = RunningRobustError{}; }
};

/// (P(l1), P(l∞)) proportional to the running robust errors.
inline std::pair<double, double> eat_sampling_probability(const RunningRobustError& r) {
  const double e1 = r.rerr(Norm::L1);
  const double einf = r.rerr(Norm::Linf);
  const double s = e1 + einf;
  if (!(s > 0.0)) return {0.5, 0.5};
  return {e1 / s, einf / s};
}

namespace detail {

/// Uniform double in [0,1) from the top 53 bits.
inline double unit_draw(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t index_draw(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(n));
}

}  // namespace detail

inline Norm sample_eat_norm(const RunningRobustError& r, std::mt19937_64& rng) {
  return detail::unit_draw(rng) < eat_sampling_probability(r).first ? Norm::L1 : Norm::Linf;
}

// ---- per-batch perturbation ----

/// Losses of the three candidate copies per example and the kept index.
struct MaxTrace {
  std::vector<std::array<double, 3>> losses;
  std::vector<std::uint8_t> chosen;
};

struct BatchPerturbation {
  Batch batch;  ///< n rows, or 3n for AVG
  std::array<std::size_t, 3> telemetry{0, 0, 0};
  /// Fraction of attacked points misclassified, per norm actually attacked.
  std::array<std::optional<double>, 3> robust_error;
  std::optional<Norm> sampled;  ///< SAT / E-AT draw
  MaxTrace max_trace;
  MsdTrace msd_trace;
};

/// Builds the training batch for one step. For E-AT the running error of
/// the sampled norm is updated here, before any parameter update.
inline BatchPerturbation generate_batch_perturbation(const Scheme& scheme, const Network& net,
                                                     const Batch& batch, const ThreatUnion& threats,
                                                     const AttackConfig& cfg, std::mt19937_64& rng,
                                                     RunningRobustError& rerr,
                                                     bool record_traces = false) {
  check_scheme_union(scheme, threats);
  BatchPerturbation out;
  const std::size_t n = batch.size();
  auto attack = [&](Norm p) {
    AttackConfig c = cfg;
    c.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(p));
    AttackResult r = pgd_attack(net, batch, threats.at(p), c);
    out.robust_error[static_cast<std::size_t>(p)] =
        static_cast<double>(r.n_success()) / static_cast<double>(n);
    return r;
  };
  auto single = [&](Norm p) {
    AttackResult r = attack(p);
    out.batch = Batch{std::move(r.adversarial_inputs), batch.labels};
    out.telemetry[static_cast<std::size_t>(p)] += n;
    return *out.robust_error[static_cast<std::size_t>(p)];
  };

  switch (scheme.kind) {
    case SchemeKind::Single:
      single(scheme.p);
      break;
    case SchemeKind::SAT: {
      const Norm p = kAllNorms[detail::index_draw(rng, 3)];
      out.sampled = p;
      single(p);
      break;
    }
    case SchemeKind::EAT:
    case SchemeKind::EATUniform: {
      const Norm p = scheme.kind == SchemeKind::EAT
                         ? sample_eat_norm(rerr, rng)
                         : (detail::unit_draw(rng) < 0.5 ? Norm::L1 : Norm::Linf);
      out.sampled = p;
      rerr.add(p, single(p));
      break;
    }
    case SchemeKind::AVG: {
      const std::size_t d = batch.dim();
      out.batch = Batch{Tensor::matrix(3 * n, d), {}};
      out.batch.labels.reserve(3 * n);
      std::size_t k = 0;
      for (Norm p : kAllNorms) {
        const AttackResult r = attack(p);
        std::copy(r.adversarial_inputs.data().begin(), r.adversarial_inputs.data().end(),
                  out.batch.inputs.data().begin() + static_cast<std::ptrdiff_t>(k * n * d));
        out.batch.labels.insert(out.batch.labels.end(), batch.labels.begin(), batch.labels.end());
        out.telemetry[k] += n;
        ++k;
      }
      break;
    }
    case SchemeKind::MAX: {
      std::array<AttackResult, 3> rs{attack(Norm::Linf), attack(Norm::L2), attack(Norm::L1)};
      out.batch = Batch{Tensor::matrix(n, batch.dim()), batch.labels};
      if (record_traces) {
        out.max_trace.losses.resize(n);
        out.max_trace.chosen.resize(n);
      }
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < 3; ++k) {
          if (rs[k].final_loss[i] > rs[best].final_loss[i]) best = k;
        }
        const auto src = rs[best].adversarial_inputs.row(i);
        std::copy(src.begin(), src.end(), out.batch.inputs.row(i).begin());
        ++out.telemetry[best];
        if (record_traces) {
          out.max_trace.losses[i] = {rs[0].final_loss[i], rs[1].final_loss[i], rs[2].final_loss[i]};
          out.max_trace.chosen[i] = static_cast<std::uint8_t>(best);
        }
      }
      break;
    }
    case SchemeKind::MSD: {
      // The trace supplies the per-step selection counts.
      MsdTrace trace;
      AttackResult r = msd_attack(net, batch, threats, cfg, &trace);
      out.telemetry = trace.counts();
      if (record_traces) out.msd_trace = std::move(trace);
      out.batch = Batch{std::move(r.adversarial_inputs), batch.labels};
      break;
    }
  }
  return out;
}

// ---- optimizer ----

struct SgdState {
  std::vector<Tensor> velocity;
};

/// v <- m*v + (g + wd*θ); θ <- θ - lr*v.
inline void sgd_step(Network& net, const std::vector<Tensor>& grads, double lr, double momentum,
                     double weight_decay, SgdState& state) {
  auto params = net.parameters();
  if (grads.size() != params.size()) throw ShapeMismatch("gradient count does not match network");
  if (state.velocity.empty()) {
    for (const Tensor* p : params) state.velocity.emplace_back(p->shape());
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& theta = *params[k];
    Tensor& v = state.velocity[k];
    if (grads[k].shape() != theta.shape() || v.shape() != theta.shape()) {
      throw ShapeMismatch("gradient/velocity shape mismatch at parameter " + std::to_string(k));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = momentum * v[i] + (grads[k][i] + weight_decay * theta[i]);
      theta[i] -= lr * v[i];
    }
  }
}

// ---- training loop ----

enum class CheckpointSelection { Best, Final };

struct TrainConfig {
  Scheme scheme;
  ThreatUnion threats;
  int epochs = 10;
  int batch_size = 64;
  LrSchedule lr = LrSchedule::piecewise(0.05, 70);
  double momentum = 0.9;
  double weight_decay = 5e-4;
  AttackConfig attack{10, std::nullopt, 1};
  std::uint64_t seed = 0;
  CheckpointSelection selection = CheckpointSelection::Final;

  void validate() const {
    if (epochs < 1) throw InvalidConfig("train.epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfig("train.batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("train.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidConfig("train.weight_decay must be >= 0");
    if (!(lr.initial >= 0.0)) throw InvalidConfig("train.lr must be >= 0");
    if (lr.kind == LrSchedule::Kind::Piecewise && !(lr.factor > 0.0)) {
      throw InvalidConfig("train.lr_factor must be positive");
    }
    attack.validate();
    if (threats.size() == 0) throw InvalidConfig("no threat radii configured");
    check_scheme_union(scheme, threats);
  }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;              ///< at the first step of the epoch
  double train_loss = 0.0;      ///< mean adversarial loss over batches
  double clean_accuracy = 0.0;  ///< on the training split, after the epoch
  /// Mean batch robust error per norm; NaN when the norm was not attacked.
  std::array<double, 3> robust_error{};
  std::array<std::size_t, 3> rerr_count_at_start{};
  double seconds = 0.0;  ///< wall time of the batch loop
};

struct TrainResult {
  Network net;
  std::vector<EpochRecord> history;
  SelectionTelemetry telemetry;
  int selected_epoch = 0;
  std::vector<double> validation_union;  ///< per epoch, Best selection only
};

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[index_draw(rng, i)]);
  return idx;
}

inline double accuracy(const Network& net, const Batch& data) {
  const auto pred = predict(net, data.inputs);
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(c) / static_cast<double>(std::max<std::size_t>(pred.size(), 1));
}

inline TrainResult train_impl(Network net, const Batch& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw InvalidConfig("training set is empty");
  data.validate(net.num_classes());
  if (data.dim() != net.input_dim()) {
    throw ArchMismatch("network expects d=" + std::to_string(net.input_dim()) + ", data has d=" +
                       std::to_string(data.dim()));
  }
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7a11));

  Batch train_set = data;
  Batch val_set;
  const bool best = cfg.selection == CheckpointSelection::Best;
  if (best) {
    const auto order = shuffled_indices(data.size(), rng);
    const std::size_t n_val = std::max<std::size_t>(1, data.size() / 10);
    if (n_val >= data.size()) throw InvalidConfig("dataset too small for a validation split");
    const std::size_t n_train = data.size() - n_val;
    train_set = data.subset(std::span(order).first(n_train));
    val_set = data.subset(std::span(order).subspan(n_train));
  }

  const std::size_t n = train_set.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const int steps_per_epoch = static_cast<int>((n + bs - 1) / bs);

  TrainResult result;
  SgdState opt;
  RunningRobustError rerr;
  double best_score = -1.0;
  std::uint64_t global_step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rerr.reset();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.rerr_count_at_start = rerr.count;
    rec.lr = lr_at(cfg.lr, epoch, 0, steps_per_epoch, cfg.epochs);
    std::array<double, 3> err_sum{0, 0, 0};
    std::array<std::size_t, 3> err_n{0, 0, 0};
    std::array<std::size_t, 3> tel{0, 0, 0};
    double loss_sum = 0.0;

    const auto t0 = std::chrono::steady_clock::now();
    const auto order = shuffled_indices(n, rng);
    for (int step = 0; step < steps_per_epoch; ++step) {
      const std::size_t b = static_cast<std::size_t>(step) * bs;
      const std::size_t e = std::min(n, b + bs);
      const Batch batch = train_set.subset(std::span(order).subspan(b, e - b));
      AttackConfig acfg = cfg.attack;
      acfg.seed = mix_seed(cfg.attack.seed ^ cfg.seed, global_step);
      BatchPerturbation pert =
          generate_batch_perturbation(cfg.scheme, net, batch, cfg.threats, acfg, rng, rerr);
      for (std::size_t k = 0; k < 3; ++k) {
        tel[k] += pert.telemetry[k];
        if (pert.robust_error[k]) {
          err_sum[k] += *pert.robust_error[k];
          ++err_n[k];
        }
      }
      const Gradients g = backward(net, pert.batch);
      loss_sum += g.loss;
      sgd_step(net, g.params, lr_at(cfg.lr, epoch, step, steps_per_epoch, cfg.epochs), cfg.momentum,
               cfg.weight_decay, opt);
      ++global_step;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    for (std::size_t k = 0; k < 3; ++k) {
      rec.robust_error[k] = err_n[k] ? err_sum[k] / static_cast<double>(err_n[k])
                                     : std::numeric_limits<double>::quiet_NaN();
    }
    rec.clean_accuracy = accuracy(net, train_set);
    result.history.push_back(rec);
    result.telemetry.per_epoch.push_back(tel);

    if (best) {
      AttackConfig vcfg = cfg.attack;
      vcfg.n_restarts = 1;
      vcfg.seed = mix_seed(cfg.seed, 0xba1);
      const double score = evaluate(net, val_set, cfg.threats, vcfg).union_accuracy();
      result.validation_union.push_back(score);
      if (score > best_score) {
        best_score = score;
        result.net = net;
        result.selected_epoch = epoch;
      }
    }
  }
  if (!best) {
    result.net = std::move(net);
    result.selected_epoch = cfg.epochs - 1;
  }
  return result;
}

}  // namespace detail

/// Trains a copy of `init` and returns it with per-epoch history and
/// selection telemetry. With Best selection the last 10% of a seeded shuffle
/// is held out and the epoch with the highest union robust accuracy on it
/// is returned.
inline TrainResult train(const Network& init, const Batch& data, const TrainConfig& cfg) {
  return detail::train_impl(init, data, cfg);
}

/// Defaults for fine-tuning: three epochs, thirds learning-rate drop.
inline TrainConfig finetune_config(Scheme scheme, ThreatUnion threats, double initial_lr = 0.01) {
  TrainConfig c;
  c.scheme = scheme;
  c.threats = std::move(threats);
  c.epochs = 3;
  c.lr = LrSchedule::thirds(initial_lr);
  return c;
}

/// Continues training from a checkpointed network with a fresh optimizer.
inline TrainResult finetune(const Network& checkpoint, const Batch& data, const TrainConfig& cfg) {
  if (data.dim() != checkpoint.input_dim()) {
    throw ArchMismatch("checkpoint " + checkpoint.arch() + " expects d=" +
                       std::to_string(checkpoint.input_dim()) + ", data has d=" +
                       std::to_string(data.dim()));
  }
  for (int y : data.labels) {
    if (y < 0 || y >= checkpoint.num_classes()) {
      throw ArchMismatch("checkpoint " + checkpoint.arch() + " has no class " + std::to_string(y));
    }
  }
  return detail::train_impl(checkpoint, data, cfg);
}

}  // namespace mnlab
