// mnlab: train, fine-tune and evaluate multi-norm robust classifiers, and
// print the lp-ball geometry constants.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error,
// 3 failed --check.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mnlab/checkpoint.hpp"
#include "mnlab/config.hpp"
#include "mnlab/dataset.hpp"
#include "mnlab/evaluation.hpp"
#include "mnlab/geometry.hpp"
#include "mnlab/idx.hpp"
#include "mnlab/sweep.hpp"
#include "mnlab/training.hpp"

namespace fs = std::filesystem;
using namespace mnlab;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every accepted key with its default. "" means unset.
const std::map<std::string, std::string>& key_defaults() {
  static const std::map<std::string, std::string> d{
      {"data.kind", "rings"},
      {"data.n_per_class", "1000"},
      {"data.dim", "20"},
      {"data.classes", "2"},
      {"data.separation", "4"},
      {"data.images", ""},
      {"data.labels", ""},
      {"data.subset", "0"},
      {"train.seed", ""},
      {"train.scheme", "eat"},
      {"train.hidden", "64-64"},
      {"train.activation", "relu"},
      {"train.epochs", "60"},
      {"train.batch_size", "32"},
      {"train.lr_schedule", "cyclic"},
      {"train.lr", "0.05"},
      {"train.lr_drop_epoch", "70"},
      {"train.lr_factor", "10"},
      {"train.momentum", "0.9"},
      {"train.weight_decay", "0.0005"},
      {"train.selection", "final"},
      {"attack.eps_linf", "0.03"},
      {"attack.eps_l2", "0.11"},
      {"attack.eps_l1", "0.4"},
      {"attack.steps", "10"},
      {"attack.restarts", "1"},
      {"attack.step_size", "0"},
      {"attack.k_fraction", "0.05"},
      {"attack.k_fraction_final", "0.01"},
      {"eval.steps", "20"},
      {"eval.restarts", "2"},
      {"eval.curve_norm", "l2"},
      {"eval.curve_eps_max", "0.2"},
      {"eval.curve_points", "11"},
      {"eval.sweep_pairs", ""},
      {"eval.check_min_union", "0"},
      {"eval.check_min_clean", "0"},
  };
  return d;
}

// Fine-tuning starts from a short thirds schedule.
const std::map<std::string, std::string>& finetune_overrides() {
  static const std::map<std::string, std::string> d{
      {"train.epochs", "3"}, {"train.lr_schedule", "thirds"}, {"train.lr", "0.03"}};
  return d;
}

struct Resolved {
  Config cfg;
  std::uint64_t seed = 0;
  std::optional<RingsSpec> rings;
  std::optional<GaussiansSpec> gaussians;
  std::vector<std::size_t> hidden;
  Activation activation = Activation::ReLU;
  TrainConfig train;
  AttackConfig eval_attack;
  Norm curve_norm = Norm::L2;
  std::vector<double> curve_grid;
  std::vector<RadiiPair> sweep_pairs;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

Resolved resolve(Config cfg) {
  for (const auto& [k, v] : cfg.values()) {
    if (!key_defaults().count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  Resolved r;
  if (cfg.str("train.seed").empty()) {
    const char* env = std::getenv("EAT_LAB_SEED");
    cfg.set("train.seed", env && *env ? env : "0");
  }
  const long long seed = cfg.integer("train.seed");
  if (seed < 0) throw InvalidConfig("config key 'train.seed' must be >= 0");
  r.seed = static_cast<std::uint64_t>(seed);

  auto positive_int = [&](const std::string& k) {
    const long long v = cfg.integer(k);
    if (v < 1) throw InvalidConfig("config key '" + k + "' must be >= 1");
    return v;
  };
  const std::string kind = cfg.str("data.kind");
  if (kind == "rings") {
    r.rings = RingsSpec{static_cast<std::size_t>(positive_int("data.n_per_class")),
                        static_cast<std::size_t>(positive_int("data.dim"))};
    if (r.rings->lift_dim < 2) throw InvalidConfig("config key 'data.dim' must be >= 2 for rings");
  } else if (kind == "gaussians") {
    r.gaussians = GaussiansSpec{static_cast<int>(positive_int("data.classes")),
                                static_cast<std::size_t>(positive_int("data.dim")),
                                cfg.real("data.separation"),
                                static_cast<std::size_t>(positive_int("data.n_per_class"))};
  } else if (kind == "idx") {
    if (cfg.str("data.images").empty()) throw InvalidConfig("config key 'data.images' is required for idx data");
    if (cfg.str("data.labels").empty()) throw InvalidConfig("config key 'data.labels' is required for idx data");
    if (cfg.integer("data.subset") < 0) throw InvalidConfig("config key 'data.subset' must be >= 0");
  } else {
    throw InvalidConfig("config key 'data.kind': '" + kind + "' (expected rings, gaussians or idx)");
  }

  for (const auto& tok : split(cfg.str("train.hidden"), '-')) {
    if (tok.find_first_not_of("0123456789") != std::string::npos || std::stoul(tok) == 0) {
      throw InvalidConfig("config key 'train.hidden': bad width '" + tok + "'");
    }
    r.hidden.push_back(std::stoul(tok));
  }
  if (r.hidden.size() + 1 > kMaxLayers) throw InvalidConfig("config key 'train.hidden': too many layers");
  r.activation = parse_activation(cfg.str("train.activation"));

  std::vector<ThreatSpec> specs;
  for (Norm p : kAllNorms) {
    const std::string k = "attack.eps_" + to_string(p);
    const double e = cfg.real(k);
    if (e < 0.0) throw InvalidConfig("config key '" + k + "' must be >= 0");
    if (e > 0.0) specs.push_back({p, e});
  }
  if (specs.empty()) throw InvalidConfig("all of attack.eps_linf, attack.eps_l2, attack.eps_l1 are 0");

  TrainConfig& t = r.train;
  t.scheme = parse_scheme(cfg.str("train.scheme"));
  t.threats = ThreatUnion(specs);
  t.epochs = static_cast<int>(cfg.integer("train.epochs"));
  t.batch_size = static_cast<int>(cfg.integer("train.batch_size"));
  t.lr.kind = parse_lr_kind(cfg.str("train.lr_schedule"));
  t.lr.initial = cfg.real("train.lr");
  t.lr.drop_epoch = static_cast<int>(cfg.integer("train.lr_drop_epoch"));
  t.lr.factor = cfg.real("train.lr_factor");
  t.momentum = cfg.real("train.momentum");
  t.weight_decay = cfg.real("train.weight_decay");
  const std::string sel = cfg.str("train.selection");
  if (sel != "best" && sel != "final") throw InvalidConfig("config key 'train.selection': best or final");
  t.selection = sel == "best" ? CheckpointSelection::Best : CheckpointSelection::Final;
  t.seed = r.seed;
  t.attack.n_steps = static_cast<int>(cfg.integer("attack.steps"));
  t.attack.n_restarts = static_cast<int>(cfg.integer("attack.restarts"));
  const double step = cfg.real("attack.step_size");
  if (step < 0.0) throw InvalidConfig("config key 'attack.step_size' must be >= 0 (0 = per-norm rule)");
  if (step > 0.0) t.attack.step_size = step;
  t.attack.k_fraction = cfg.real("attack.k_fraction");
  t.attack.k_fraction_final = cfg.real("attack.k_fraction_final");
  t.attack.seed = 0;
  t.validate();

  r.eval_attack = t.attack;
  r.eval_attack.n_steps = static_cast<int>(cfg.integer("eval.steps"));
  r.eval_attack.n_restarts = static_cast<int>(cfg.integer("eval.restarts"));
  r.eval_attack.seed = mix_seed(r.seed, 0xe7a1);
  r.eval_attack.validate();

  r.curve_norm = parse_norm(cfg.str("eval.curve_norm"));
  r.curve_grid = linear_grid(cfg.real("eval.curve_eps_max"), static_cast<int>(cfg.integer("eval.curve_points")));
  for (const auto& pr : split(cfg.str("eval.sweep_pairs"), ',')) {
    const auto parts = split(pr, ':');
    if (parts.size() != 2) throw InvalidConfig("config key 'eval.sweep_pairs': expected epsinf:eps1 entries");
    Config tmp;
    tmp.set("eval.sweep_pairs", parts[0]);
    const double einf = tmp.real("eval.sweep_pairs");
    tmp.set("eval.sweep_pairs", parts[1]);
    r.sweep_pairs.push_back({einf, tmp.real("eval.sweep_pairs")});
  }
  if (!r.sweep_pairs.empty() && kind != "idx") {
    (void)predicted_l2_radii(r.sweep_pairs, static_cast<int>(cfg.integer("data.dim")));
  }
  (void)cfg.real("eval.check_min_union");
  (void)cfg.real("eval.check_min_clean");
  r.cfg = std::move(cfg);
  return r;
}

Dataset load_data(const Resolved& r) {
  if (r.rings) return generate(*r.rings, r.seed);
  if (r.gaussians) return generate(*r.gaussians, r.seed);
  const long long sub = r.cfg.integer("data.subset");
  const Batch all = load_idx(r.cfg.str("data.images"), r.cfg.str("data.labels"),
                             sub > 0 ? std::optional<std::size_t>(static_cast<std::size_t>(sub)) : std::nullopt,
                             r.seed);
  return detail::split_90_10(all, r.seed);
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write '" + p.string() + "'");
  out << content;
  if (!out) throw FileError("write failed for '" + p.string() + "'");
}

std::string history_csv(const std::vector<EpochRecord>& h) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,clean_acc,rerr_linf,rerr_l2,rerr_l1\n";
  for (const auto& e : h) {
    os << e.epoch << ',' << format_real(e.lr) << ',' << format_real(e.train_loss) << ','
       << fraction4(e.clean_accuracy);
    for (double v : e.robust_error) os << ',' << (std::isnan(v) ? std::string() : fraction4(v));
    os << '\n';
  }
  return os.str();
}

void print_summary(const RobustnessReport& rep, const ThreatUnion& threats) {
  std::cout << "clean   acc=" << fraction4(rep.clean()) << '\n';
  for (const auto& t : threats.specs()) {
    std::cout << std::left << std::setw(7) << to_string(t.p) << " eps=" << format_real(t.eps)
              << " robust_acc=" << fraction4(*rep.accuracy(t.p)) << '\n';
  }
  std::cout << "union   robust_acc=" << fraction4(rep.union_accuracy())
            << " average=" << fraction4(rep.average()) << '\n';
}

void check(const Resolved& r, const RobustnessReport& rep) {
  const double mu = r.cfg.real("eval.check_min_union");
  const double mc = r.cfg.real("eval.check_min_clean");
  if (!rep.consistent()) throw CheckFailed("report aggregates disagree with the matrix");
  if (rep.union_accuracy() < mu) {
    throw CheckFailed("union robust accuracy " + fraction4(rep.union_accuracy()) + " < " + fraction4(mu));
  }
  if (rep.clean() < mc) throw CheckFailed("clean accuracy " + fraction4(rep.clean()) + " < " + fraction4(mc));
}

struct Common {
  std::string config_path;
  std::string out_dir = ".";
  std::string checkpoint;
  int threads = 0;
  bool check = false;
};

Network load_net(const std::string& path, Meta* meta = nullptr) {
  Checkpoint ck = load_checkpoint(path);
  if (meta) *meta = ck.meta;
  return ck.net;
}

Meta run_meta(const Resolved& r, const std::string& source) {
  return {{"scheme", to_string(r.train.scheme)},
          {"epochs", std::to_string(r.train.epochs)},
          {"seed", std::to_string(r.seed)},
          {"source", source}};
}

int run_train_like(const Resolved& r, const Common& c, bool finetuning) {
  const Dataset ds = load_data(r);
  Network init;
  if (finetuning) {
    init = load_net(c.checkpoint);
  } else {
    std::vector<std::size_t> dims{ds.train.dim()};
    dims.insert(dims.end(), r.hidden.begin(), r.hidden.end());
    int k = 0;
    for (int y : ds.train.labels) k = std::max(k, y + 1);
    dims.push_back(static_cast<std::size_t>(std::max(k, 2)));
    init = Network::mlp(std::span<const std::size_t>(dims), r.activation, mix_seed(r.seed, 0x1417));
  }
  const TrainResult tr = finetuning ? finetune(init, ds.train, r.train) : train(init, ds.train, r.train);
  const fs::path out(c.out_dir);
  save_checkpoint(tr.net, run_meta(r, finetuning ? "finetune:" + c.checkpoint : "train"),
                  (out / "model.ckpt").string());
  const RobustnessReport rep = evaluate(tr.net, ds.test, r.train.threats, r.eval_attack);
  std::ostringstream rcsv;
  write_report_csv(rcsv, {{to_string(r.train.scheme), rep}}, r.seed);
  write_file(out / "report.csv", rcsv.str());
  std::ostringstream tcsv;
  write_telemetry_csv(tcsv, telemetry_summary(tr.telemetry));
  write_file(out / "telemetry.csv", tcsv.str());
  write_file(out / "history.csv", history_csv(tr.history));
  std::ostringstream timing;
  for (const auto& e : tr.history) timing << "epoch " << e.epoch << " seconds " << e.seconds << '\n';
  write_file(out / "timing.txt", timing.str());
  print_summary(rep, r.train.threats);
  if (c.check) check(r, rep);
  return 0;
}

int run_eval(const Resolved& r, const Common& c) {
  Meta meta;
  const Network net = load_net(c.checkpoint, &meta);
  const Dataset ds = load_data(r);
  const RobustnessReport rep = evaluate(net, ds.test, r.train.threats, r.eval_attack);
  const std::string model = meta.count("scheme") ? meta.at("scheme") : fs::path(c.checkpoint).stem().string();
  std::ostringstream rcsv;
  write_report_csv(rcsv, {{model, rep}}, r.seed);
  write_file(fs::path(c.out_dir) / "report.csv", rcsv.str());
  print_summary(rep, r.train.threats);
  if (c.check) check(r, rep);
  return 0;
}

int run_curve(const Resolved& r, const Common& c) {
  const Network net = load_net(c.checkpoint);
  const Dataset ds = load_data(r);
  const auto curve = robustness_curve(net, ds.test, r.curve_norm, r.curve_grid, r.eval_attack);
  std::ostringstream os;
  write_curve_csv(os, curve);
  write_file(fs::path(c.out_dir) / "curve.csv", os.str());
  for (const auto& pt : curve) {
    std::cout << to_string(pt.p) << " eps=" << format_real(pt.eps) << " robust_acc=" << fraction4(pt.robust_accuracy)
              << '\n';
  }
  if (c.check) {
    for (std::size_t k = 1; k < curve.size(); ++k) {
      if (curve[k].robust_accuracy > curve[k - 1].robust_accuracy) throw CheckFailed("curve is not monotone");
    }
  }
  return 0;
}

int run_sweep(const Resolved& r, const Common& c) {
  if (r.sweep_pairs.empty()) throw InvalidConfig("config key 'eval.sweep_pairs' is empty");
  const Network net = load_net(c.checkpoint);
  const Dataset ds = load_data(r);
  const auto res = radii_sweep(net, ds.train, ds.test, r.sweep_pairs, r.train, r.curve_grid, r.eval_attack);
  std::ostringstream os;
  os << "epsinf,eps1,predicted_eps2,p,eps,robust_acc\n";
  for (const auto& s : res) {
    for (const auto& pt : s.curve) {
      os << format_real(s.pair.epsinf) << ',' << format_real(s.pair.eps1) << ',' << format_real(s.predicted_eps2)
         << ',' << to_string(pt.p) << ',' << format_real(pt.eps) << ',' << fraction4(pt.robust_accuracy) << '\n';
    }
    std::cout << "epsinf=" << format_real(s.pair.epsinf) << " eps1=" << format_real(s.pair.eps1)
              << " predicted_eps2=" << format_real(s.predicted_eps2) << '\n';
  }
  write_file(fs::path(c.out_dir) / "sweep.csv", os.str());
  return 0;
}

struct GeometryArgs {
  double eps1 = 0.0;
  double epsinf = 0.0;
  int d = 0;
  std::string p = "2";
  bool oracle = false;
};

int run_geometry(const GeometryArgs& g, const std::optional<std::string>& out_dir) {
  const double p = g.p == "inf" ? geometry::kInf : std::stod(g.p);
  const geometry::GeometryQuery q{g.eps1, g.epsinf, g.d};
  std::ostringstream os;
  os << std::setprecision(4) << std::fixed;
  const auto range = geometry::nontrivial_range(g.epsinf, g.d);
  os << "nontrivial eps1 range (" << range.lo << ", " << range.hi << ")\n";
  os << "union " << geometry::min_lp_outside_union(q, p) << '\n';
  if (p == 2.0) os << "bound " << geometry::l2_union_upper_bound(q) << '\n';
  os << "hull " << geometry::min_lp_outside_hull(q, p).radius << '\n';
  if (g.oracle) {
    if (g.d > 6) throw InvalidConfig("--oracle needs d <= 6");
    os << "oracle_union " << geometry::oracle_min_norm(q, p, geometry::RegionKind::Union) << '\n';
    os << "oracle_hull " << geometry::oracle_min_norm(q, p, geometry::RegionKind::ConvexHull) << '\n';
  }
  std::cout << os.str();
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_file(fs::path(*out_dir) / "geometry.txt", os.str());
  }
  return 0;
}

Config collect_config(const Common& c, const std::vector<std::string>& extras, bool finetuning) {
  Config cfg;
  for (const auto& [k, v] : key_defaults()) cfg.set(k, v);
  if (finetuning) {
    for (const auto& [k, v] : finetune_overrides()) cfg.set(k, v);
  }
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw ConfigError("config file '" + c.config_path + "' does not exist");
    const Config file = Config::load(c.config_path);
    for (const auto& [k, v] : file.values()) {
      if (!key_defaults().count(k)) throw ConfigError("unknown config key '" + k + "' in " + c.config_path);
      cfg.set(k, v);
    }
  }
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string a = extras[i];
    if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
    a = a.substr(2);
    std::string key;
    std::string value;
    if (const auto eq = a.find('='); eq != std::string::npos) {
      key = a.substr(0, eq);
      value = a.substr(eq + 1);
    } else {
      key = a;
      if (i + 1 >= extras.size()) throw ConfigError("flag --" + key + " needs a value");
      value = extras[++i];
    }
    if (!key_defaults().count(key)) throw ConfigError("unknown config key '" + key + "'");
    cfg.set(key, value);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-norm adversarial robustness laboratory"};
  app.require_subcommand(1);
  Common c;
  GeometryArgs g;
  std::string geometry_out;

  std::vector<CLI::App*> runs;
  for (const char* name : {"train", "finetune", "eval", "curve", "sweep"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->allow_extras();
    sub->add_option("--config", c.config_path, "key = value config file");
    sub->add_option("--out", c.out_dir, "output directory");
    sub->add_option("--threads", c.threads, "worker threads (0 = all cores)");
    sub->add_flag("--check", c.check, "exit 3 when the run misses its check thresholds");
    if (std::string(name) != "train") sub->add_option("--checkpoint", c.checkpoint, "input checkpoint");
    sub->footer("Any config key can be overridden as --key value, e.g. --train.epochs 5.");
    runs.push_back(sub);
  }
  CLI::App* geo = app.add_subcommand("geometry", "lp radii of the union and convex hull of B1 and B-inf");
  geo->add_option("--eps1", g.eps1)->required();
  geo->add_option("--epsinf", g.epsinf)->required();
  geo->add_option("--d", g.d)->required();
  geo->add_option("--p", g.p, "norm exponent (>= 1 or inf)");
  geo->add_flag("--oracle", g.oracle, "also run the sampling oracle (d <= 6)");
  geo->add_option("--out", geometry_out, "directory for geometry.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (geo->parsed()) {
      try {
        return run_geometry(g, geometry_out.empty() ? std::nullopt : std::optional(geometry_out));
      } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
      } catch (const InvalidDimension& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
      } catch (const std::invalid_argument&) {
        std::cerr << "error: --p must be a number >= 1 or 'inf'\n";
        return 1;
      }
    }
    CLI::App* sub = nullptr;
    for (CLI::App* s : runs) {
      if (s->parsed()) sub = s;
    }
    const std::string name = sub->get_name();
    const bool needs_ckpt = name != "train";
    if (needs_ckpt && c.checkpoint.empty()) {
      std::cerr << "error: " << name << " requires --checkpoint\n";
      return 1;
    }
    if (c.threads < 0) {
      std::cerr << "error: --threads must be >= 0\n";
      return 1;
    }
    Resolved r;
    try {
      r = resolve(collect_config(c, sub->remaining(), name == "finetune" || name == "sweep"));
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    } catch (const InvalidConfig& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    } catch (const DomainError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
    if (needs_ckpt && !fs::exists(c.checkpoint)) {
      std::cerr << "error: checkpoint '" << c.checkpoint << "' does not exist\n";
      return 1;
    }
    set_num_threads(c.threads);
    fs::create_directories(c.out_dir);
    write_file(fs::path(c.out_dir) / "run.cfg", r.cfg.dump());

    if (name == "train") return run_train_like(r, c, false);
    if (name == "finetune") return run_train_like(r, c, true);
    if (name == "eval") return run_eval(r, c);
    if (name == "curve") return run_curve(r, c);
    return run_sweep(r, c);
  } catch (const CheckFailed& e) {
    std::cerr << "check failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
