#include "mmat/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mmat/errors.hpp"
#include "mmat/evaluation.hpp"
#include "mmat/format.hpp"
#include "mmat/random.hpp"
#include "mmat/strategy.hpp"
#include "mmat/training.hpp"

namespace mmat::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

json default_config() {
  return json::parse(R"({
    "seed": 0,
    "output_dir": "mmat-out",
    "dataset": {
      "kind": "rings",
      "n_per_class": 1000,
      "val_n_per_class": 250,
      "test_n_per_class": 500,
      "sigma": 0.2,
      "centers": [[-1.0, 0.0], [1.0, 0.0]],
      "radii": [1.0, 1.5],
      "noise": [0.02, 0.25],
      "base_epsilon": null,
      "path": "",
      "test_path": "",
      "images": "",
      "labels": "",
      "test_images": "",
      "test_labels": ""
    },
    "model": {"hidden": [32, 32]},
    "train": {
      "method": "natural",
      "epochs": 40,
      "batch_size": 128,
      "lr": 0.05,
      "milestones": [[30, 0.1], [36, 0.1]],
      "momentum": 0.9,
      "weight_decay": 0.0035,
      "lambda": 4.0,
      "attack_iterations": 10,
      "attack_step_fraction": 0.25,
      "random_start": true,
      "epsilon": null,
      "loss": "ce",
      "teacher": "",
      "auto_teacher": false,
      "teacher_epsilon_factor": 0.75,
      "strategy": "",
      "robust_metrics": true
    },
    "strategy": {
      "mode": "zmax-static",
      "grading": "zmax",
      "z1": 2.0,
      "z2": 6.0,
      "budgets": null,
      "fractions": [0.4, 0.7],
      "deepfool_space": "logit",
      "max_iter": 50,
      "overshoot": 1.02,
      "margins": ""
    },
    "attack": {
      "epsilon": null,
      "attacks": ["fgsm", "pgd", "cw"],
      "pgd_iterations": 20,
      "pgd_step_fraction": 0.1,
      "random_start": true
    },
    "eval": {
      "split": "test",
      "bins": 25,
      "bin_width": null,
      "subset": "correct"
    }
  })");
}

namespace {

bool same_kind(const json& def, const json& v) {
  if (def.is_null()) return v.is_null() || v.is_number() || v.is_array();
  if (def.is_number()) return v.is_number();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array() || (v.is_number() && !def.empty() && def[0].is_number());
  if (def.is_object()) return v.is_object();
  return false;
}

void overlay(json& target, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "/" : path, "expected an object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = path + "/" + key;
    if (!target.contains(key)) throw ConfigError(here, "unknown key");
    json& slot = target[key];
    if (!same_kind(slot, value)) throw ConfigError(here, "wrong type");
    if (slot.is_object()) {
      overlay(slot, value, here);
    } else {
      slot = value;
    }
  }
}

template <typename F>
auto field(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
}

double base_epsilon_for(const json& ds) {
  const std::string kind = ds["kind"];
  if (kind == "gaussians") return ds["sigma"].get<double>() / 4.0;
  if (kind == "idx") return 8.0 / 255.0;
  return 0.1;
}

}  // namespace

json resolve_config(const json& user) {
  json cfg = default_config();
  overlay(cfg, user, "");
  for (const char* ptr : {"/dataset/base_epsilon", "/train/epsilon", "/attack/epsilon", "/eval/bin_width"}) {
    if (cfg.at(json::json_pointer(ptr)).is_array()) throw ConfigError(ptr, "wrong type");
  }
  auto& ds = cfg["dataset"];
  const std::string kind = ds["kind"];
  if (kind != "gaussians" && kind != "rings" && kind != "idx" && kind != "csv") {
    throw ConfigError("/dataset/kind", "expected gaussians|rings|idx|csv");
  }
  if (ds["base_epsilon"].is_null()) ds["base_epsilon"] = base_epsilon_for(ds);
  const double base = ds["base_epsilon"];
  if (!(base > 0.0)) throw ConfigError("/dataset/base_epsilon", "must be > 0");

  auto& tr = cfg["train"];
  field("/train/method", [&] { return method_from_string(tr["method"].get<std::string>()); });
  field("/train/loss", [&] { return loss_kind_from_string(tr["loss"].get<std::string>()); });
  if (tr["epsilon"].is_null()) tr["epsilon"] = base;
  for (const auto& m : tr["milestones"]) {
    if (!m.is_array() || m.size() != 2 || !m[0].is_number_integer() || !m[1].is_number()) {
      throw ConfigError("/train/milestones", "expected [[epoch, factor], ...]");
    }
  }

  auto& st = cfg["strategy"];
  field("/strategy/mode", [&] { return budget_mode_from_string(st["mode"].get<std::string>()); });
  if (st["grading"] != "zmax" && st["grading"] != "margin") {
    throw ConfigError("/strategy/grading", "expected zmax|margin");
  }
  if (st["deepfool_space"] != "probability" && st["deepfool_space"] != "logit") {
    throw ConfigError("/strategy/deepfool_space", "expected probability|logit");
  }
  if (st["budgets"].is_null()) {
    const auto b = StrategyParams::scaled_budgets(base);
    st["budgets"] = {b[0], b[1], b[2]};
  }
  if (!st["budgets"].is_array() || st["budgets"].size() != 3) {
    throw ConfigError("/strategy/budgets", "expected three budgets");
  }
  for (const auto& b : st["budgets"]) {
    if (!b.is_number() || !(b.get<double>() >= 0.0)) throw ConfigError("/strategy/budgets", "expected budgets >= 0");
  }
  if (!(st["z1"].get<double>() < st["z2"].get<double>())) throw ConfigError("/strategy/z1", "need z1 < z2");

  auto& at = cfg["attack"];
  if (at["epsilon"].is_null()) at["epsilon"] = base;
  for (const auto& a : at["attacks"]) {
    if (!a.is_string() || (a != "fgsm" && a != "pgd" && a != "cw")) {
      throw ConfigError("/attack/attacks", "expected entries among fgsm|pgd|cw");
    }
  }
  auto& ev = cfg["eval"];
  if (ev["bin_width"].is_null()) ev["bin_width"] = base / 8.0;
  field("/eval/subset", [&] { return margin_subset_from_string(ev["subset"].get<std::string>()); });
  if (ev["split"] != "test" && ev["split"] != "train" && ev["split"] != "validation") {
    throw ConfigError("/eval/split", "expected train|validation|test");
  }
  if (!cfg["seed"].is_number_integer() || cfg["seed"].get<std::int64_t>() < 0) {
    throw ConfigError("/seed", "expected a nonnegative integer");
  }
  cfg["seed"] = cfg["seed"].get<std::uint64_t>();
  return cfg;
}

// Where the outputs go does not change what they contain.
std::string config_hash(const json& resolved) {
  json content = resolved;
  content.erase("output_dir");
  return fnv1a_hex(content.dump());
}

namespace {

Dataset read_csv_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("/dataset/path", "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  Dataset d;
  std::vector<double> values;
  std::size_t dim = 0, classes = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() < 2) throw FormatError("csv: need at least one feature and a label", 0);
    if (dim == 0) dim = cells.size() - 1;
    if (cells.size() - 1 != dim) throw FormatError("csv: ragged row", 0);
    for (std::size_t j = 0; j < dim; ++j) values.push_back(std::stod(cells[j]));
    const auto y = static_cast<std::size_t>(std::stoul(cells.back()));
    d.labels.push_back(y);
    classes = std::max(classes, y + 1);
  }
  d.examples = grad::Tensor({d.labels.size(), dim}, std::move(values));
  d.classes = std::max<std::size_t>(classes, 2);
  d.id = path.filename().string();
  return d;
}

Dataset generate(const json& ds, std::uint64_t key, std::size_t n_per_class) {
  const std::string kind = ds["kind"];
  if (kind == "gaussians") {
    std::vector<Point2> centers;
    for (const auto& c : ds["centers"]) centers.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    return gen_gaussians(n_per_class, centers, ds["sigma"].get<double>(), key);
  }
  const auto radii = ds["radii"].get<std::vector<double>>();
  const auto noise = ds["noise"].is_number() ? std::vector<double>{ds["noise"].get<double>()}
                                             : ds["noise"].get<std::vector<double>>();
  return gen_rings(n_per_class, radii, noise, key);
}

}  // namespace

Splits make_datasets(const json& cfg) {
  const auto& ds = cfg["dataset"];
  const std::string kind = ds["kind"];
  const std::uint64_t seed = cfg["seed"];
  const double base = ds["base_epsilon"];
  Splits s;
  if (kind == "gaussians" || kind == "rings") {
    s.train = generate(ds, rng::derive(seed, "data", {0}), ds["n_per_class"]);
    s.validation = generate(ds, rng::derive(seed, "data", {1}), ds["val_n_per_class"]);
    s.test = generate(ds, rng::derive(seed, "data", {2}), ds["test_n_per_class"]);
  } else if (kind == "idx") {
    s.train = load_idx_dataset(ds["images"].get<std::string>(), ds["labels"].get<std::string>(), "idx-train");
    const bool has_test = !ds["test_images"].get<std::string>().empty();
    s.test = has_test ? load_idx_dataset(ds["test_images"].get<std::string>(),
                                         ds["test_labels"].get<std::string>(), "idx-test")
                      : s.train;
    s.validation = s.test;
  } else {
    s.train = read_csv_dataset(ds["path"].get<std::string>());
    s.test = ds["test_path"].get<std::string>().empty() ? s.train
                                                       : read_csv_dataset(ds["test_path"].get<std::string>());
    s.validation = s.test;
  }
  for (Dataset* d : {&s.train, &s.validation, &s.test}) {
    d->base_epsilon = base;
    d->validate();
  }
  return s;
}

namespace {

struct Context {
  json cfg;
  std::string hash;
  std::uint64_t seed = 0;
  fs::path out_dir;
};

std::string provenance_line(const Context& ctx) {
  return "# config_hash=" + ctx.hash + " seed=" + std::to_string(ctx.seed) +
         " version=" + kArtifactVersion + "\n";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", e.what());
  }
}

Context make_context(const std::string& config_path, const json& overrides) {
  json user = config_path.empty() ? json::object() : read_json_file(config_path);
  // Flags take precedence over the file.
  user.merge_patch(overrides);
  Context ctx;
  ctx.cfg = resolve_config(user);
  ctx.hash = config_hash(ctx.cfg);
  ctx.seed = ctx.cfg["seed"];
  ctx.out_dir = ctx.cfg["output_dir"].get<std::string>();
  fs::create_directories(ctx.out_dir);
  json resolved = ctx.cfg;
  resolved["config_hash"] = ctx.hash;
  resolved["version"] = kArtifactVersion;
  write_file(ctx.out_dir / "resolved-config.json", resolved.dump(1) + "\n");
  return ctx;
}

std::vector<std::size_t> layer_sizes(const json& cfg, const Dataset& d) {
  std::vector<std::size_t> sizes{d.dim()};
  for (const auto& h : cfg["model"]["hidden"]) sizes.push_back(h.get<std::size_t>());
  sizes.push_back(d.classes);
  return sizes;
}

TrainConfig train_config(const json& cfg, Method method, double sat_eps) {
  const auto& t = cfg["train"];
  TrainConfig c;
  c.epochs = t["epochs"];
  c.batch_size = t["batch_size"];
  c.lr = t["lr"];
  c.milestones.clear();
  for (const auto& m : t["milestones"]) c.milestones.push_back({m[0].get<int>(), m[1].get<double>()});
  c.momentum = t["momentum"];
  c.weight_decay = t["weight_decay"];
  c.lambda = t["lambda"];
  c.attack_iterations = t["attack_iterations"];
  c.attack_step_fraction = t["attack_step_fraction"];
  c.random_start = t["random_start"];
  c.seed = cfg["seed"];
  c.method = method;
  c.sat_epsilon = sat_eps;
  c.sat_loss = loss_kind_from_string(t["loss"].get<std::string>());
  c.metric_epsilon = cfg["attack"]["epsilon"];
  c.robust_metrics = t["robust_metrics"];
  return c;
}

StrategyParams strategy_params(const json& cfg) {
  const auto& s = cfg["strategy"];
  StrategyParams p;
  p.mode = budget_mode_from_string(s["mode"].get<std::string>());
  p.grading = s["grading"] == "margin" ? GradeTable::Mode::kMargin : GradeTable::Mode::kZmax;
  p.z1 = s["z1"];
  p.z2 = s["z2"];
  p.budgets = {s["budgets"][0].get<double>(), s["budgets"][1].get<double>(), s["budgets"][2].get<double>()};
  p.fractions = {s["fractions"][0].get<double>(), s["fractions"][1].get<double>()};
  p.uniform_epsilon = cfg["train"]["epsilon"];
  p.deepfool.max_iter = s["max_iter"];
  p.deepfool.overshoot = s["overshoot"];
  p.deepfool.space = s["deepfool_space"] == "logit" ? DeepFoolSpace::kLogit : DeepFoolSpace::kProbability;
  return p;
}

Checkpoint train_and_save(const Context& ctx, const Splits& data, Method method, double eps,
                          const MmatSetup* mmat, const std::string& tag, const fs::path& final_path,
                          const fs::path* best_path, std::ostream& out, bool write_metrics) {
  const TrainConfig config = train_config(ctx.cfg, method, eps);
  const Network init = Network::mlp(layer_sizes(ctx.cfg, data.train), rng::derive(ctx.seed, "init"));
  const TrainResult r = train(config, data.train, init, &data.validation, mmat);
  Checkpoint final_ckpt{r.final_network, tag, config.epochs, ctx.hash, ctx.seed};
  save_checkpoint(final_path, final_ckpt);
  out << "wrote " << final_path.string() << "\n";
  if (best_path) {
    save_checkpoint(*best_path, {r.best_network, tag, r.best_epoch + 1, ctx.hash, ctx.seed});
    out << "wrote " << best_path->string() << "\n";
  }
  if (write_metrics) {
    write_file(ctx.out_dir / "metrics.csv", provenance_line(ctx) + metrics_to_csv(r.metrics));
    out << "wrote " << (ctx.out_dir / "metrics.csv").string() << "\n";
  }
  return final_ckpt;
}

std::string sat_tag(double eps) { return "sat-" + format_budget(eps); }

int cmd_train(const Context& ctx, bool auto_teacher, std::ostream& out) {
  const Splits data = make_datasets(ctx.cfg);
  const auto& t = ctx.cfg["train"];
  const Method method = method_from_string(t["method"].get<std::string>());
  const double eps = t["epsilon"];
  const fs::path final_path = ctx.out_dir / "checkpoint-final.json";
  const fs::path best_path = ctx.out_dir / "checkpoint-best.json";

  if (method != Method::kMmat) {
    train_and_save(ctx, data, method, eps, nullptr, method == Method::kSat ? sat_tag(eps) : "natural",
                   final_path, &best_path, out, true);
    return kExitOk;
  }

  MmatSetup setup;
  setup.strategy = strategy_params(ctx.cfg);
  const std::string teacher_path = t["teacher"];
  if (!teacher_path.empty()) {
    setup.teacher.network = load_checkpoint(teacher_path).network;
  } else if (auto_teacher || t["auto_teacher"].get<bool>()) {
    const double teps = eps * t["teacher_epsilon_factor"].get<double>();
    const Checkpoint teacher = train_and_save(ctx, data, Method::kSat, teps, nullptr, sat_tag(teps),
                                              ctx.out_dir / "teacher.json", nullptr, out, false);
    setup.teacher.network = teacher.network;
  } else {
    throw ConfigError("/train/teacher", "MMAT needs a teacher checkpoint or --auto-teacher");
  }
  setup.teacher.tag = "teacher";

  if (setup.strategy.mode == BudgetMode::kMarginStatic || setup.strategy.mode == BudgetMode::kZmaxStatic) {
    const std::string strategy_path = t["strategy"];
    Network strategy;
    if (!strategy_path.empty()) {
      strategy = load_checkpoint(strategy_path).network;
    } else {
      strategy = train_and_save(ctx, data, Method::kSat, eps, nullptr, sat_tag(eps),
                                ctx.out_dir / "strategy.json", nullptr, out, false)
                     .network;
    }
    setup.budgets = assign_budgets(strategy, data.train, setup.strategy, "strategy");
  } else if (setup.strategy.mode == BudgetMode::kUniform) {
    setup.budgets = assign_budgets(setup.teacher.network.value(), data.train, setup.strategy, "uniform");
  }
  train_and_save(ctx, data, Method::kMmat, eps, &setup, "mmat", final_path, &best_path, out, true);
  return kExitOk;
}

std::vector<IndexedValue> read_margins_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("/strategy/margins", "cannot open " + path.string());
  std::vector<IndexedValue> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("margins: expected index,margin", 0);
    out.push_back({std::stoul(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  return out;
}

int cmd_grade(const Context& ctx, const std::string& checkpoint, std::ostream& out) {
  const StrategyParams params = strategy_params(ctx.cfg);
  GradeTable table;
  const std::string margins_path = ctx.cfg["strategy"]["margins"];
  if (!margins_path.empty()) {
    table = grade_by_margin(read_margins_csv(margins_path), params.fractions);
  } else {
    if (checkpoint.empty()) throw ConfigError("--checkpoint", "grade needs a checkpoint or a margins file");
    const Splits data = make_datasets(ctx.cfg);
    StrategyParams p = params;
    if (p.mode == BudgetMode::kDynamic) {
      p.mode = p.grading == GradeTable::Mode::kMargin ? BudgetMode::kMarginStatic : BudgetMode::kZmaxStatic;
    }
    table = assign_budgets(load_checkpoint(checkpoint).network, data.train, p, checkpoint).table;
  }
  write_file(ctx.out_dir / "grades.csv", provenance_line(ctx) + table.to_csv());
  out << table.summary() << "\n";
  return kExitOk;
}

std::vector<AttackSpec> attack_specs(const json& cfg, const std::string& which, bool box01) {
  const auto& a = cfg["attack"];
  const double eps = a["epsilon"];
  const int iters = a["pgd_iterations"];
  const double step = eps * a["pgd_step_fraction"].get<double>();
  const bool rs = a["random_start"];
  const std::uint64_t seed = rng::derive(cfg["seed"].get<std::uint64_t>(), "eval-attack");
  std::vector<std::string> names;
  if (which == "all") names = a["attacks"].get<std::vector<std::string>>();
  else if (which != "none") names = {which};
  std::vector<AttackSpec> specs;
  for (const auto& n : names) {
    if (n == "fgsm") specs.push_back(AttackSpec::fgsm(eps, box01));
    else if (n == "pgd") specs.push_back({AttackFamily::kPgd, eps, step, iters, rs, LossKind::kCe, seed, box01});
    else if (n == "cw") specs.push_back({AttackFamily::kCwPgd, eps, step, iters, rs, LossKind::kCw, seed, box01});
    else throw ConfigError("--attack", "expected all|none|fgsm|pgd|cw");
  }
  return specs;
}

const Dataset& eval_split(const json& cfg, const Splits& s) {
  const std::string split = cfg["eval"]["split"];
  if (split == "train") return s.train;
  if (split == "validation") return s.validation;
  return s.test;
}

int cmd_eval(const Context& ctx, const std::vector<std::string>& checkpoints, const std::string& which,
             const std::string& transfer, std::ostream& out) {
  if (checkpoints.empty()) throw ConfigError("--checkpoint", "eval needs at least one checkpoint");
  const Splits data = make_datasets(ctx.cfg);
  const Dataset& d = eval_split(ctx.cfg, data);
  const auto specs = attack_specs(ctx.cfg, which, d.box01());
  std::optional<Network> source;
  if (!transfer.empty()) source = load_checkpoint(transfer).network;
  for (const auto& path : checkpoints) {
    const Checkpoint ck = load_checkpoint(path);
    if (ck.network.input_dim() != d.dim() || ck.network.class_count() != d.classes) {
      throw ConfigError("--checkpoint", path + " does not match the dataset dimensions");
    }
    const std::string name = fs::path(path).stem().string();
    EvalReport r = evaluate(ck.network, d, specs, name, ctx.seed);
    if (source) {
      for (const auto& s : specs) {
        r.transfer[attack_label(s) + "@" + fs::path(transfer).stem().string()] =
            black_box_transfer(*source, ck.network, d, s);
      }
    }
    const fs::path report = ctx.out_dir / ("report-" + name + ".json");
    write_file(report, r.to_json(ctx.hash));
    out << name << " NA=" << format_double(r.natural.value());
    for (const auto& [label, f] : r.robust) out << ' ' << label << "=" << format_double(f.value());
    for (const auto& [label, f] : r.transfer) out << " transfer:" << label << "=" << format_double(f.value());
    out << "\n";
  }
  return kExitOk;
}

int cmd_margins(const Context& ctx, const std::string& checkpoint, std::ostream& out) {
  if (checkpoint.empty()) throw ConfigError("--checkpoint", "margins needs a checkpoint");
  const Splits data = make_datasets(ctx.cfg);
  const Dataset& d = eval_split(ctx.cfg, data);
  const auto& ev = ctx.cfg["eval"];
  const StrategyParams p = strategy_params(ctx.cfg);
  MarginHistogram h = margin_histogram(load_checkpoint(checkpoint).network, d, ev["bins"],
                                       margin_subset_from_string(ev["subset"].get<std::string>()),
                                       ev["bin_width"], p.deepfool);
  h.model_id = fs::path(checkpoint).stem().string();
  write_file(ctx.out_dir / "margins.csv",
             provenance_line(ctx) + "# not_found=" + std::to_string(h.not_found) + "\n" + h.to_csv());
  out << h.model_id << " evaluated=" << h.evaluated() << " not_found=" << h.not_found
      << " median=" << format_double(h.median()) << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Moderate-margin adversarial training toolkit", "mmat"};
  app.require_subcommand(1);

  std::string config_path, out_dir, method, dataset, teacher, strategy, attack = "all", transfer,
      mode, margins_file, subset;
  std::vector<std::string> checkpoints;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, bins;
  std::optional<double> epsilon, lambda;
  bool auto_teacher = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "root seed");
    sub->add_option("--dataset", dataset, "gaussians|rings|idx|csv");
  };
  auto* train_cmd = app.add_subcommand("train", "train a natural, SAT or MMAT model");
  common(train_cmd);
  train_cmd->add_option("--method", method, "natural|sat|mmat");
  train_cmd->add_option("--teacher", teacher, "teacher checkpoint for MMAT");
  train_cmd->add_flag("--auto-teacher", auto_teacher, "train the SAT teacher first");
  train_cmd->add_option("--strategy", strategy, "strategy checkpoint for static grading");
  train_cmd->add_option("--epochs", epochs);
  train_cmd->add_option("--epsilon", epsilon, "training budget");
  train_cmd->add_option("--lambda", lambda);

  auto* grade_cmd = app.add_subcommand("grade", "assign per-example budgets");
  common(grade_cmd);
  grade_cmd->add_option("--checkpoint", checkpoints, "strategy checkpoint");
  grade_cmd->add_option("--mode", mode, "zmax-static|margin-static");
  grade_cmd->add_option("--margins", margins_file, "CSV of index,margin to grade directly");

  auto* eval_cmd = app.add_subcommand("eval", "natural and robust accuracy");
  common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoints, "checkpoints to evaluate")->expected(1, -1);
  eval_cmd->add_option("--attack", attack, "all|none|fgsm|pgd|cw");
  eval_cmd->add_option("--transfer", transfer, "source checkpoint for black-box transfer");
  eval_cmd->add_option("--epsilon", epsilon, "attack budget");

  auto* margins_cmd = app.add_subcommand("margins", "DeepFool margin histogram");
  common(margins_cmd);
  margins_cmd->add_option("--checkpoint", checkpoints);
  margins_cmd->add_option("--subset", subset, "correct|misclassified|all");
  margins_cmd->add_option("--bins", bins);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }

  json overrides = json::object();
  if (!out_dir.empty()) overrides["output_dir"] = out_dir;
  if (seed) overrides["seed"] = *seed;
  if (!dataset.empty()) overrides["dataset"]["kind"] = dataset;
  if (!method.empty()) overrides["train"]["method"] = method;
  if (!teacher.empty()) overrides["train"]["teacher"] = teacher;
  if (!strategy.empty()) overrides["train"]["strategy"] = strategy;
  if (epochs) overrides["train"]["epochs"] = *epochs;
  if (lambda) overrides["train"]["lambda"] = *lambda;
  if (!mode.empty()) overrides["strategy"]["mode"] = mode;
  if (!margins_file.empty()) overrides["strategy"]["margins"] = margins_file;
  if (!subset.empty()) overrides["eval"]["subset"] = subset;
  if (bins) overrides["eval"]["bins"] = *bins;
  if (epsilon) {
    if (*train_cmd) overrides["train"]["epsilon"] = *epsilon;
    else overrides["attack"]["epsilon"] = *epsilon;
  }

  try {
    const Context ctx = make_context(config_path, overrides);
    if (*train_cmd) return cmd_train(ctx, auto_teacher, out);
    const std::string ckpt = checkpoints.empty() ? "" : checkpoints.front();
    if (*grade_cmd) return cmd_grade(ctx, ckpt, out);
    if (*eval_cmd) return cmd_eval(ctx, checkpoints, attack, transfer, out);
    return cmd_margins(ctx, ckpt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DegeneratePartitionError& e) {
    err << "degenerate data: " << e.what() << "\n";
    return kExitDegenerate;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace mmat::cli
