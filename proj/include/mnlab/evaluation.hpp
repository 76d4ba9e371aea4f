#pragma once

/// Clean, per-norm, average and union robust accuracy, robustness curves,
/// selection-telemetry summaries and their CSV serializations.

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mnlab/attacks.hpp"
#include "mnlab/error.hpp"
#include "mnlab/network.hpp"

namespace mnlab {

class RobustnessReport {
 public:
  RobustnessReport() = default;

  /// Aggregates from the per-point matrix: rows are points, columns follow
  /// `norms`; an entry is true iff the point is classified correctly and the
  /// attack in that norm failed.
  RobustnessReport(std::vector<std::uint8_t> clean_correct, std::vector<Norm> norms,
                   std::vector<std::vector<std::uint8_t>> matrix)
      : clean_correct_(std::move(clean_correct)), norms_(std::move(norms)), matrix_(std::move(matrix)) {
    recompute();
  }

  [[nodiscard]] double clean() const { return clean_; }
  [[nodiscard]] double union_accuracy() const { return union_; }
  [[nodiscard]] double average() const { return average_; }
  [[nodiscard]] std::size_t n_points() const { return clean_correct_.size(); }
  [[nodiscard]] const std::vector<Norm>& norms() const { return norms_; }
  [[nodiscard]] const std::vector<std::vector<std::uint8_t>>& matrix() const { return matrix_; }
  [[nodiscard]] const std::vector<std::uint8_t>& clean_correct() const { return clean_correct_; }
  [[nodiscard]] const std::vector<double>& per_norm() const { return per_norm_; }

  [[nodiscard]] std::optional<double> accuracy(Norm p) const {
    for (std::size_t j = 0; j < norms_.size(); ++j) {
      if (norms_[j] == p) return per_norm_[j];
    }
    return std::nullopt;
  }

  /// Aggregates recomputed from the stored matrix agree with the stored values.
  [[nodiscard]] bool consistent() const {
    RobustnessReport copy(clean_correct_, norms_, matrix_);
    return copy.clean_ == clean_ && copy.union_ == union_ && copy.average_ == average_ &&
           copy.per_norm_ == per_norm_;
  }

  bool operator==(const RobustnessReport& o) const {
    return clean_correct_ == o.clean_correct_ && norms_ == o.norms_ && matrix_ == o.matrix_;
  }

 private:
  void recompute() {
    const std::size_t n = clean_correct_.size();
    const std::size_t m = norms_.size();
    if (n == 0) throw InvalidConfig("robustness report needs at least one point");
    if (m == 0) throw InvalidConfig("robustness report needs at least one norm");
    if (matrix_.size() != n) throw ShapeMismatch("robustness matrix row count mismatch");
    std::size_t clean_count = 0;
    std::size_t union_count = 0;
    std::vector<std::size_t> col(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (matrix_[i].size() != m) throw ShapeMismatch("robustness matrix column count mismatch");
      clean_count += clean_correct_[i] ? 1 : 0;
      bool all = true;
      for (std::size_t j = 0; j < m; ++j) {
        if (matrix_[i][j] && !clean_correct_[i]) {
          throw InvalidConfig("misclassified point marked robust");
        }
        col[j] += matrix_[i][j] ? 1 : 0;
        all = all && matrix_[i][j];
      }
      union_count += all ? 1 : 0;
    }
    const double dn = static_cast<double>(n);
    clean_ = static_cast<double>(clean_count) / dn;
    union_ = static_cast<double>(union_count) / dn;
    per_norm_.assign(m, 0.0);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      per_norm_[j] = static_cast<double>(col[j]) / dn;
      sum += per_norm_[j];
    }
    average_ = sum / static_cast<double>(m);
    const double lo = *std::min_element(per_norm_.begin(), per_norm_.end());
    const double hi = *std::max_element(per_norm_.begin(), per_norm_.end());
    if (!(union_ <= lo && lo <= average_ + 1e-15 && average_ <= hi + 1e-15 && hi <= clean_)) {
      throw Error("robustness report violates union <= min <= average <= max <= clean");
    }
  }

  std::vector<std::uint8_t> clean_correct_;
  std::vector<Norm> norms_;
  std::vector<std::vector<std::uint8_t>> matrix_;
  double clean_ = 0.0;
  double union_ = 0.0;
  double average_ = 0.0;
  std::vector<double> per_norm_;
};

/// Clean accuracy plus, for every ball in the union, an independent
/// best-iterate PGD run. A point counts as union-robust only if every
/// per-norm attack failed on it.
inline RobustnessReport evaluate(const Network& net, const Batch& data, const ThreatUnion& threats,
                                 const AttackConfig& cfg) {
  if (data.size() == 0) throw InvalidConfig("evaluate needs a nonempty dataset");
  const std::vector<int> pred = predict(net, data.inputs);
  std::vector<std::uint8_t> correct(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) correct[i] = pred[i] == data.labels[i] ? 1 : 0;
  std::vector<Norm> norms;
  std::vector<std::vector<std::uint8_t>> matrix(data.size());
  for (const ThreatSpec& t : threats.specs()) {
    norms.push_back(t.p);
    AttackConfig c = cfg;
    c.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(t.p));
    const AttackResult r = pgd_attack(net, data, t, c);
    for (std::size_t i = 0; i < data.size(); ++i) {
      matrix[i].push_back(correct[i] && !r.success[i] ? 1 : 0);
    }
  }
  return RobustnessReport(std::move(correct), std::move(norms), std::move(matrix));
}

struct CurvePoint {
  Norm p = Norm::L2;
  double eps = 0.0;
  double robust_accuracy = 0.0;
};

/// Robust accuracy over an increasing radius grid. A point broken at some
/// radius counts as broken at every larger radius, so the curve is exactly
/// non-increasing; only still-robust points are attacked again.
inline std::vector<CurvePoint> robustness_curve(const Network& net, const Batch& data, Norm p,
                                                const std::vector<double>& eps_grid,
                                                const AttackConfig& cfg) {
  if (eps_grid.empty()) throw InvalidConfig("robustness_curve needs a nonempty radius grid");
  if (data.size() == 0) throw InvalidConfig("robustness_curve needs a nonempty dataset");
  for (std::size_t k = 0; k < eps_grid.size(); ++k) {
    if (eps_grid[k] < 0.0 || (k > 0 && !(eps_grid[k] > eps_grid[k - 1]))) {
      throw InvalidConfig("radius grid must be nonnegative and strictly increasing");
    }
  }
  const std::vector<int> pred = predict(net, data.inputs);
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (pred[i] == data.labels[i]) alive.push_back(i);
  }
  std::vector<CurvePoint> out;
  const double n = static_cast<double>(data.size());
  for (std::size_t k = 0; k < eps_grid.size(); ++k) {
    const double eps = eps_grid[k];
    if (eps > 0.0 && !alive.empty()) {
      const Batch sub = data.subset(alive);
      AttackConfig c = cfg;
      c.seed = mix_seed(cfg.seed, k);
      const AttackResult r = pgd_attack(net, sub, {p, eps}, c);
      std::vector<std::size_t> still;
      for (std::size_t j = 0; j < alive.size(); ++j) {
        if (!r.success[j]) still.push_back(alive[j]);
      }
      alive = std::move(still);
    }
    out.push_back({p, eps, static_cast<double>(alive.size()) / n});
  }
  return out;
}

inline std::vector<double> linear_grid(double eps_max, int n_points) {
  if (n_points < 2 || !(eps_max > 0.0)) throw InvalidConfig("need eps_max > 0 and >= 2 grid points");
  std::vector<double> g(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) g[static_cast<std::size_t>(i)] = eps_max * i / (n_points - 1);
  return g;
}

/// Per-epoch counts of which norm was selected (MAX argmax per example, MSD
/// per step, single-attack schemes per attacked example), in (l∞, l2, l1) order.
struct SelectionTelemetry {
  std::vector<std::array<std::size_t, 3>> per_epoch;
};

struct TelemetryRow {
  int epoch = 0;
  std::array<double, 3> fractions{};
};

struct TelemetrySummary {
  std::vector<TelemetryRow> rows;
  std::vector<int> empty_epochs;  ///< epochs with no selections, omitted from rows
};

inline TelemetrySummary telemetry_summary(const SelectionTelemetry& t) {
  TelemetrySummary s;
  for (std::size_t e = 0; e < t.per_epoch.size(); ++e) {
    const auto& c = t.per_epoch[e];
    const std::size_t total = c[0] + c[1] + c[2];
    if (total == 0) {
      s.empty_epochs.push_back(static_cast<int>(e));
      continue;
    }
    TelemetryRow row{static_cast<int>(e), {}};
    for (std::size_t k = 0; k < 3; ++k) {
      row.fractions[k] = static_cast<double>(c[k]) / static_cast<double>(total);
    }
    s.rows.push_back(row);
  }
  return s;
}

// ---- CSV ----

inline std::string fraction4(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

inline std::string format_real(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(10) << v;
  return os.str();
}

inline constexpr const char* kReportHeader = "model,clean,acc_linf,acc_l2,acc_l1,average,union,n_points,seed";
inline constexpr const char* kCurveHeader = "p,eps,robust_acc";
inline constexpr const char* kTelemetryHeader = "epoch,frac_linf,frac_l2,frac_l1";

/// One report.csv row; norms absent from the report leave their column empty.
inline std::string report_csv_row(const std::string& model, const RobustnessReport& r,
                                  std::uint64_t seed) {
  std::string row = model + "," + fraction4(r.clean());
  for (Norm p : kAllNorms) {
    const auto a = r.accuracy(p);
    row += "," + (a ? fraction4(*a) : std::string());
  }
  row += "," + fraction4(r.average()) + "," + fraction4(r.union_accuracy()) + "," +
         std::to_string(r.n_points()) + "," + std::to_string(seed);
  return row;
}

inline void write_report_csv(std::ostream& os,
                             const std::vector<std::pair<std::string, RobustnessReport>>& rows,
                             std::uint64_t seed) {
  os << kReportHeader << '\n';
  for (const auto& [name, r] : rows) os << report_csv_row(name, r, seed) << '\n';
}

inline void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& curve) {
  os << kCurveHeader << '\n';
  for (const auto& c : curve) {
    os << to_string(c.p) << ',' << format_real(c.eps) << ',' << fraction4(c.robust_accuracy) << '\n';
  }
}

inline void write_telemetry_csv(std::ostream& os, const TelemetrySummary& s) {
  os << kTelemetryHeader << '\n';
  for (const auto& r : s.rows) {
    os << r.epoch << ',' << fraction4(r.fractions[0]) << ',' << fraction4(r.fractions[1]) << ','
       << fraction4(r.fractions[2]) << '\n';
  }
}

}  // namespace mnlab
