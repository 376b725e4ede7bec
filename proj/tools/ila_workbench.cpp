// Command-line front end: train models, run baseline and intermediate-level
// attacks, evaluate transfer, and produce the analysis tables.

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ila/attacks.hpp"
#include "ila/data.hpp"
#include "ila/harness.hpp"
#include "ila/intermediate.hpp"
#include "ila/models/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace ila;
using harness::ExperimentManifest;

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = "out";
  std::size_t threads = 1;
  bool f64 = false;

  Exec exec() const { return {std::max<std::size_t>(1, threads), 32}; }
};

// -- option sets ------------------------------------------------------------
// Field names double as JSON config keys and as long option names (with
// '-' for '_').

struct DataOpts {
  std::string cifar_dir;  // empty: synthetic images
  std::string split = "test";
  std::size_t offset = 0;
  std::size_t count = 1000;
  double separation = 4.0;
  std::uint64_t data_seed = 0;
  std::uint64_t world_seed = 0;

  harness::DatasetSpec spec() const {
    harness::DatasetSpec s;
    s.kind = cifar_dir.empty() ? "synthetic" : "cifar10";
    s.dir = cifar_dir;
    s.split = split;
    s.offset = offset;
    s.count = count;
    s.seed = data_seed;
    s.separation = separation;
    s.world_seed = world_seed;
    return s;
  }
};

json data_json(const DataOpts& d) {
  return {{"cifar_dir", d.cifar_dir},   {"split", d.split},
          {"offset", d.offset},         {"count", d.count},
          {"separation", d.separation}, {"data_seed", d.data_seed},
          {"world_seed", d.world_seed}};
}

void add_data_options(CLI::App* app, DataOpts& d) {
  app->add_option("--cifar-dir", d.cifar_dir, "CIFAR-10 binary directory (default: synthetic)");
  app->add_option("--split", d.split, "train or test");
  app->add_option("--offset", d.offset, "first image of the slice");
  app->add_option("--count", d.count, "number of images");
  app->add_option("--separation", d.separation, "synthetic class separation");
  app->add_option("--data-seed", d.data_seed, "synthetic sample seed");
  app->add_option("--world-seed", d.world_seed, "synthetic world seed");
}

struct TrainOpts {
  std::string arch = "mini_resnet";
  double width = 1.0;
  int num_classes = 10;
  std::string cifar_dir;
  std::size_t train_count = 10000;
  std::size_t test_count = 1000;
  double separation = 4.0;
  std::uint64_t data_seed = 0;
  std::uint64_t world_seed = 0;
  harness::TrainConfig train;
};

json to_options(const TrainOpts& o) {
  json j = {{"arch", o.arch},
            {"width", o.width},
            {"num_classes", o.num_classes},
            {"cifar_dir", o.cifar_dir},
            {"train_count", o.train_count},
            {"test_count", o.test_count},
            {"separation", o.separation},
            {"data_seed", o.data_seed},
            {"world_seed", o.world_seed}};
  j.update(json(o.train));
  j.erase("seed");
  return j;
}

struct AttackOpts {
  std::string model;
  std::string attack = "ifgsm";
  std::vector<std::string> ensemble;
  double epsilon = 0.015;
  double lr = 0.002;
  int n_iters = 20;
  double momentum = 1.0;
  double lambda = 0.0;
  DataOpts data;
};

json to_options(const AttackOpts& o) {
  json j = {{"model", o.model},     {"attack", o.attack},     {"ensemble", o.ensemble},
            {"epsilon", o.epsilon}, {"lr", o.lr},             {"n_iters", o.n_iters},
            {"momentum", o.momentum}, {"lambda", o.lambda}};
  j.update(data_json(o.data));
  return j;
}

struct IlaOpts {
  std::string model;
  std::string baseline;
  std::string layer = "auto";
  std::vector<std::size_t> candidates;
  std::string loss = "ilap";
  double alpha = 1.0;
  double lr = 0.006;
  int n_iters = 10;
  double epsilon = 0;  // 0: take the baseline's budget
};

json to_options(const IlaOpts& o) {
  return {{"model", o.model},   {"baseline", o.baseline}, {"layer", o.layer},
          {"candidates", o.candidates}, {"loss", o.loss}, {"alpha", o.alpha},
          {"lr", o.lr},         {"n_iters", o.n_iters},   {"epsilon", o.epsilon}};
}

struct TransferOpts {
  std::vector<std::string> batches;
  std::vector<std::string> targets;  // path or name=path
};

json to_options(const TransferOpts& o) {
  return {{"batches", o.batches}, {"targets", o.targets}};
}

struct AngleOpts {
  std::string model;
  std::string batch_a;
  std::string batch_b;
};

json to_options(const AngleOpts& o) {
  return {{"model", o.model}, {"batch_a", o.batch_a}, {"batch_b", o.batch_b}};
}

struct BoundaryOpts {
  std::string model;
  std::string batch_a;
  std::string batch_b;
  std::size_t index = 0;
  double extent = 0;  // 0: twice the larger perturbation norm
  std::size_t resolution = 101;
  bool random_v = false;
};

json to_options(const BoundaryOpts& o) {
  return {{"model", o.model},         {"batch_a", o.batch_a},       {"batch_b", o.batch_b},
          {"index", o.index},         {"extent", o.extent},         {"resolution", o.resolution},
          {"random_v", o.random_v}};
}

struct SweepOpts {
  std::string kind = "epsilon";
  std::vector<std::string> grid;
  std::string source;
  std::vector<std::string> targets;
  std::vector<std::string> ensemble;
  std::string reference = "ifgsm";
  std::string layer = "auto";
  std::vector<std::size_t> candidates;
  std::string loss = "ilap";
  double alpha = 1.0;
  double epsilon = 0.015;
  double baseline_lr = 0.002;
  int baseline_iters = 20;
  int seed_iters = 10;
  double ila_lr = 0.006;
  int ila_iters = 10;
  DataOpts data;
};

json to_options(const SweepOpts& o) {
  json j = {{"kind", o.kind},           {"grid", o.grid},
            {"source", o.source},       {"targets", o.targets},
            {"ensemble", o.ensemble},   {"reference", o.reference},
            {"layer", o.layer},         {"candidates", o.candidates},
            {"loss", o.loss},           {"alpha", o.alpha},
            {"epsilon", o.epsilon},     {"baseline_lr", o.baseline_lr},
            {"baseline_iters", o.baseline_iters}, {"seed_iters", o.seed_iters},
            {"ila_lr", o.ila_lr},       {"ila_iters", o.ila_iters}};
  j.update(data_json(o.data));
  return j;
}

// -- config files -------------------------------------------------------------

/// Fill every option of `app` that was not given on the command line from
/// the config key of the same name.
void apply_config(CLI::App* app, const json& cfg) {
  for (CLI::Option* opt : app->get_options()) {
    if (opt->count() > 0 || opt->get_lnames().empty()) continue;
    std::string key = opt->get_lnames().front();
    std::replace(key.begin(), key.end(), '-', '_');
    if (key == "help" || key == "config" || key == "out" || key == "threads" ||
        !cfg.contains(key) || cfg.at(key).is_null()) {
      continue;
    }
    auto text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    std::vector<std::string> values;
    const json& v = cfg.at(key);
    if (v.is_array()) {
      for (const auto& e : v) values.push_back(text(e));
      if (values.empty()) continue;
    } else {
      values.push_back(text(v));
    }
    opt->add_result(values);
    opt->run_callback();
  }
}

/// A config file is either a manifest written by an earlier run or a plain
/// object of option values.
struct ConfigFile {
  json options = json::object();
  std::optional<std::uint64_t> seed;
};

ConfigFile read_config(const std::string& path, const std::string& command) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config " + path + " must hold a JSON object");
  ConfigFile c;
  if (j.contains("command") && j.contains("options")) {
    if (j.at("command") != command) {
      throw ConfigError("config " + path + " is a manifest for '" +
                        j.at("command").get<std::string>() + "', not '" + command + "'");
    }
    c.options = j.at("options");
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } else {
    c.options = j.contains(command) ? j.at(command) : j;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  }
  return c;
}

// -- shared helpers -------------------------------------------------------------

struct Run {
  const Globals& g;
  std::string command;
  json options;
  ExperimentManifest manifest;

  Run(const Globals& globals, std::string cmd, json opts)
      : g(globals), command(std::move(cmd)), options(std::move(opts)) {
    fs::create_directories(g.out);
    manifest.command = command;
    manifest.seed = g.seed;
    manifest.options = options;
    manifest.options["f64"] = g.f64;
    manifest.run_id = harness::make_run_id(command, json{{"options", manifest.options},
                                                         {"seed", g.seed}});
    manifest.created_at = harness::utc_timestamp();
  }

  fs::path path(const std::string& name) const { return fs::path(g.out) / name; }

  void input(const std::string& role, const std::string& p) {
    manifest.inputs[role] = p;
    manifest.hashes[role] = harness::file_sha256(p);
  }

  void output(const std::string& role, const std::string& name) { manifest.outputs[role] = name; }

  void finish() {
    harness::save_manifest(manifest, path("manifest.json"));
    std::cout << "manifest: " << path("manifest.json").string() << "\n";
  }
};

template <class T>
models::Model<T> load_model_file(const std::string& p) {
  if (p.empty()) throw ConfigError("a model path is required");
  return models::load_model<T>(p);
}

template <class T>
attacks::AdversarialBatch<T> load_batch_file(const std::string& p) {
  if (p.empty()) throw ConfigError("a batch path is required");
  return harness::load_batch<T>(p);
}

std::string fmt4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

std::pair<std::string, std::string> split_named(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) return {"", s};
  return {s.substr(0, eq), s.substr(eq + 1)};
}

template <class T>
std::vector<T> flat(const engine::Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

std::optional<std::size_t> parse_layer(const std::string& s) {
  if (s == "auto") return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoul(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("layer must be 'auto' or an endpoint index, got '" + s + "'");
}

// -- commands ---------------------------------------------------------------

template <class T>
int cmd_train(const Globals& g, TrainOpts o) {
  o.train.seed = g.seed;
  Run run(g, "train", to_options(o));
  models::ModelSpec spec;
  spec.arch = models::parse_arch(o.arch);
  spec.width_multiplier = static_cast<float>(o.width);
  spec.num_classes = o.num_classes;
  harness::DatasetSpec tr;
  tr.kind = o.cifar_dir.empty() ? "synthetic" : "cifar10";
  tr.dir = o.cifar_dir;
  tr.split = "train";
  tr.count = o.train_count;
  tr.seed = o.data_seed;
  tr.separation = o.separation;
  tr.world_seed = o.world_seed;
  harness::DatasetSpec te = tr;
  te.split = "test";
  te.count = o.test_count;
  const auto train = harness::load_dataset(tr);
  const auto test = harness::load_dataset(te);
  const auto ckpt = run.path("model.ilam");
  std::vector<harness::EpochLog> log;
  auto on_epoch = [&](const harness::EpochLog& e) {
    std::cout << "epoch " << e.epoch << " lr " << e.lr << " loss " << fmt4(e.train_loss)
              << " train_acc " << fmt4(e.train_accuracy) << " test_acc "
              << fmt4(e.test_accuracy) << std::endl;
  };
  run.output("model", "model.ilam");
  run.output("log", "train_log.csv");
  try {
    auto res = harness::train_model<T>(spec, g.seed, train, test, o.train, ckpt, on_epoch);
    models::save_model(res.model, ckpt);
    io::write_text(run.path("train_log.csv"), harness::training_log_csv(res.log));
    run.manifest.hashes["model_out"] = harness::file_sha256(ckpt);
  } catch (const harness::TrainingDiverged<T>& e) {
    models::save_model(e.last_good(), ckpt);
    io::write_text(run.path("train_log.csv"), harness::training_log_csv(e.log()));
    run.finish();
    throw;
  }
  run.finish();
  return 0;
}

template <class T>
int cmd_attack(const Globals& g, const AttackOpts& o) {
  Run run(g, "attack", to_options(o));
  run.input("model", o.model);
  const auto model = load_model_file<T>(o.model);
  const auto ds = harness::load_dataset(o.data.spec());
  const auto x = ds.images.template cast<T>();
  attacks::AttackConfig cfg;
  cfg.budget.epsilon = o.epsilon;
  cfg.lr = o.lr;
  cfg.n_iters = o.n_iters;
  cfg.momentum_mu = o.momentum;
  cfg.seed = g.seed;
  attacks::AdversarialBatch<T> b;
  if (o.attack == "fgsm") {
    b = attacks::fgsm(model, x, ds.labels, cfg.budget, g.exec());
  } else if (o.attack == "ifgsm") {
    b = attacks::ifgsm(model, x, ds.labels, cfg, g.exec());
  } else if (o.attack == "mifgsm") {
    b = attacks::mifgsm(model, x, ds.labels, cfg, g.exec());
  } else if (o.attack == "multifool") {
    std::vector<models::Model<T>> members;
    members.reserve(o.ensemble.size() + 1);
    members.push_back(model);
    for (std::size_t i = 0; i < o.ensemble.size(); ++i) {
      run.input("ensemble" + std::to_string(i), o.ensemble[i]);
      members.push_back(load_model_file<T>(o.ensemble[i]));
    }
    std::vector<const models::Model<T>*> ptrs;
    for (const auto& m : members) ptrs.push_back(&m);
    b = attacks::ensemble_multifool(attacks::EnsembleConfig<T>::uniform(ptrs, o.lambda), x,
                                    ds.labels, cfg, g.exec());
  } else {
    throw ConfigError("attack must be fgsm, ifgsm, mifgsm or multifool, got '" + o.attack + "'");
  }
  harness::save_batch(b, run.path("batch.ilab"));
  io::write_text(run.path("batch.csv"), b.to_csv());
  run.output("batch", "batch.ilab");
  run.output("per_image", "batch.csv");
  run.manifest.hashes["originals"] = harness::originals_hash(b);
  run.manifest.hashes["batch_out"] = harness::file_sha256(run.path("batch.ilab"));
  std::size_t clean_ok = 0;
  for (std::size_t i = 0; i < b.size(); ++i) clean_ok += b.pred_clean[i] == b.labels[i];
  std::cout << "attack,source,n,epsilon,lr,n_iters,source_clean_acc,source_adv_acc\n"
            << b.attack << ',' << b.source << ',' << b.size() << ',' << cfg.budget.epsilon << ','
            << cfg.lr << ',' << cfg.n_iters << ','
            << fmt4(100.0 * static_cast<double>(clean_ok) / static_cast<double>(b.size())) << ','
            << fmt4(b.source_accuracy()) << '\n';
  run.finish();
  return 0;
}

/// Originals hash recorded by the manifest next to a batch, if any.
std::optional<std::string> recorded_originals_hash(const std::string& batch_path) {
  const auto m = fs::path(batch_path).parent_path() / "manifest.json";
  if (!fs::exists(m)) return std::nullopt;
  const auto man = harness::load_manifest(m);
  auto it = man.hashes.find("originals");
  if (it == man.hashes.end()) return std::nullopt;
  return it->second;
}

template <class T>
int cmd_ila(const Globals& g, const IlaOpts& o) {
  Run run(g, "ila", to_options(o));
  run.input("model", o.model);
  run.input("baseline", o.baseline);
  const auto model = load_model_file<T>(o.model);
  const auto base = load_batch_file<T>(o.baseline);
  const auto hash = harness::originals_hash(base);
  if (auto rec = recorded_originals_hash(o.baseline); rec && *rec != hash) {
    throw InputError("baseline originals hash " + hash + " does not match its manifest (" +
                     *rec + ")");
  }
  if (base.source != models::arch_id(model.spec().arch)) {
    throw InputError("baseline was crafted on " + base.source + ", not on this " +
                     std::string(models::arch_id(model.spec().arch)) + " model");
  }
  run.manifest.hashes["originals"] = hash;
  intermediate::IlaConfig cfg;
  cfg.loss = intermediate::parse_loss(o.loss);
  cfg.alpha = o.alpha;
  cfg.lr = o.lr;
  cfg.n_iters = o.n_iters;
  cfg.budget = base.config.contains("budget")
                   ? base.config.at("budget").template get<attacks::PerturbationBudget>()
                   : attacks::PerturbationBudget{};
  if (o.epsilon > 0) cfg.budget.epsilon = o.epsilon;

  std::vector<std::size_t> layers;
  const auto explicit_layer = parse_layer(o.layer);
  if (explicit_layer) {
    layers = {*explicit_layer};
  } else if (!o.candidates.empty()) {
    layers = o.candidates;
  } else {
    for (std::size_t l = 0; l < model.num_endpoints(); ++l) layers.push_back(l);
  }
  std::map<std::size_t, intermediate::IlaResult<T>> results;
  std::vector<intermediate::DisturbanceCurve> curves;
  for (std::size_t l : layers) {
    cfg.layer = l;
    auto r = intermediate::ila_attack(model, base.originals, base.adversarials, base.labels, cfg,
                                      g.exec());
    auto c = intermediate::disturbance_curve(model, base.originals, r.batch.adversarials,
                                             base.adversarials, g.exec());
    c.target_layer = l;
    c.source = base.source;
    c.attack = r.batch.attack;
    curves.push_back(std::move(c));
    results.emplace(l, std::move(r));
  }
  std::size_t chosen = layers.front();
  json trace = json::object();
  if (!explicit_layer) {
    const auto sel = intermediate::select_layer(curves);
    chosen = sel.selected;
    json cands = json::array();
    for (std::size_t i = 0; i < curves.size(); ++i) {
      json vals = json::array();
      for (const auto& p : curves[i].points)
        vals.push_back(p.mean_ratio ? json(harness::round4(*p.mean_ratio)) : json(nullptr));
      cands.push_back({{"layer", sel.candidates[i]},
                       {"endpoint", model.endpoints()[sel.candidates[i]].name},
                       {"curve", vals},
                       {"peaks", sel.peaks[i]},
                       {"exhibits_peak", sel.exhibits_peak[i] != 0}});
      std::cout << "candidate " << sel.candidates[i] << " ("
                << model.endpoints()[sel.candidates[i]].name << ") curve";
      for (const auto& v : vals) std::cout << ' ' << (v.is_null() ? "-" : v.dump());
      std::cout << (sel.exhibits_peak[i] ? "  peak" : "") << '\n';
    }
    trace = {{"candidates", cands}, {"selected", sel.selected}, {"fallback", sel.fallback}};
    io::write_text(run.path("selection.json"), trace.dump(2) + "\n");
    run.output("selection", "selection.json");
  }
  const auto& best = results.at(chosen);
  harness::save_batch(best.batch, run.path("ila.ilab"));
  io::write_text(run.path("ila.csv"), best.batch.to_csv());
  io::write_text(run.path("disturbance.csv"), intermediate::curves_to_csv(curves));
  run.output("batch", "ila.ilab");
  run.output("per_image", "ila.csv");
  run.output("disturbance", "disturbance.csv");
  run.manifest.hashes["batch_out"] = harness::file_sha256(run.path("ila.ilab"));
  std::cout << "layer " << chosen << " (" << model.endpoints()[chosen].name << ") "
            << intermediate::loss_name(cfg.loss) << " source_adv_acc "
            << fmt4(best.batch.source_accuracy()) << " projection_growth "
            << fmt4(harness::projection_growth_rate(best)) << '\n';
  run.finish();
  return 0;
}

template <class T>
int cmd_transfer(const Globals& g, const TransferOpts& o) {
  Run run(g, "transfer", to_options(o));
  if (o.batches.empty()) throw ConfigError("transfer needs at least one --batches file");
  if (o.targets.empty()) throw ConfigError("transfer needs at least one --targets model");
  std::vector<attacks::AdversarialBatch<T>> batches;
  for (std::size_t i = 0; i < o.batches.size(); ++i) {
    run.input("batch" + std::to_string(i), o.batches[i]);
    batches.push_back(load_batch_file<T>(o.batches[i]));
  }
  std::vector<models::Model<T>> models_;
  std::vector<std::string> names;
  models_.reserve(o.targets.size());
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < o.targets.size(); ++i) {
    auto [name, path] = split_named(o.targets[i]);
    run.input("target" + std::to_string(i), path);
    models_.push_back(load_model_file<T>(path));
    if (name.empty()) {
      name = std::string(models::arch_id(models_.back().spec().arch));
      if (int k = ++seen[name]; k > 1) name += "#" + std::to_string(k);
    }
    names.push_back(name);
  }
  std::vector<const attacks::AdversarialBatch<T>*> bp;
  for (const auto& b : batches) bp.push_back(&b);
  std::vector<harness::NamedModel<T>> targets;
  for (std::size_t i = 0; i < models_.size(); ++i) targets.push_back({names[i], &models_[i]});
  auto rep = harness::transfer_matrix(bp, targets, g.exec());
  rep.manifest = "manifest.json";  // sits next to the report
  harness::write_report(rep, run.path("report.csv"), harness::ReportFormat::kCsv);
  harness::write_report(rep, run.path("report.json"), harness::ReportFormat::kJson);
  run.output("report_csv", "report.csv");
  run.output("report_json", "report.json");
  run.manifest.hashes["originals"] = harness::originals_hash(batches.front());
  std::cout << harness::report_csv(rep);
  run.finish();
  return 0;
}

template <class T>
int cmd_angle(const Globals& g, const AngleOpts& o) {
  Run run(g, "angle", to_options(o));
  run.input("model", o.model);
  run.input("batch_a", o.batch_a);
  run.input("batch_b", o.batch_b);
  const auto model = load_model_file<T>(o.model);
  const auto a = load_batch_file<T>(o.batch_a);
  const auto b = load_batch_file<T>(o.batch_b);
  harness::require_shared_originals(a, b, "angle");
  const auto prof = harness::angle_by_layer(model, a.originals, a.adversarials, b.adversarials,
                                            g.exec());
  io::write_text(run.path("angle.csv"), prof.to_csv());
  run.output("angles", "angle.csv");
  std::cout << prof.to_csv();
  std::vector<double> idx;
  for (std::size_t l = 0; l < prof.points.size(); ++l) idx.push_back(static_cast<double>(l));
  try {
    std::cout << "rank correlation (endpoint index vs angle): "
              << fmt4(harness::spearman(idx, prof.values())) << '\n';
  } catch (const NumericError& e) {
    std::cout << "rank correlation undefined: " << e.what() << '\n';
  }
  run.finish();
  return 0;
}

template <class T>
int cmd_boundary(const Globals& g, const BoundaryOpts& o) {
  Run run(g, "boundary", to_options(o));
  run.input("model", o.model);
  run.input("batch_a", o.batch_a);
  const auto model = load_model_file<T>(o.model);
  const auto a = load_batch_file<T>(o.batch_a);
  if (o.index >= a.size()) {
    throw ConfigError("image index " + std::to_string(o.index) + " out of range for " +
                      std::to_string(a.size()) + " images");
  }
  const std::size_t d = a.originals.numel() / a.size();
  const auto x = a.originals.slice_rows(o.index, o.index + 1);
  std::vector<double> pa(d), pb(d);
  for (std::size_t j = 0; j < d; ++j)
    pa[j] = static_cast<double>(a.adversarials[o.index * d + j]) - a.originals[o.index * d + j];
  if (o.random_v) {
    pb = harness::random_orthogonal(pa, g.seed);
  } else {
    if (o.batch_b.empty()) throw ConfigError("boundary needs --batch-b or --random-v");
    run.input("batch_b", o.batch_b);
    const auto b = load_batch_file<T>(o.batch_b);
    harness::require_shared_originals(a, b, "boundary");
    for (std::size_t j = 0; j < d; ++j)
      pb[j] = static_cast<double>(b.adversarials[o.index * d + j]) - b.originals[o.index * d + j];
  }
  double extent = o.extent;
  if (extent <= 0) {
    auto norm = [](const std::vector<double>& v) {
      double s = 0;
      for (double e : v) s += e * e;
      return std::sqrt(s);
    };
    extent = 2 * std::max(norm(pa), norm(pb));
    if (extent == 0) throw NumericError("boundary: both perturbations are zero");
  }
  const auto grid = harness::boundary_grid(model, x, pa, pb, extent, o.resolution, g.exec());
  io::write_text(run.path("boundary.csv"), grid.to_csv());
  io::write_text(run.path("boundary_markers.csv"), grid.markers_csv());
  run.output("grid", "boundary.csv");
  run.output("markers", "boundary_markers.csv");
  std::cout << grid.markers_csv();
  run.finish();
  return 0;
}

template <class T>
int cmd_sweep(const Globals& g, const SweepOpts& o) {
  Run run(g, "sweep", to_options(o));
  if (o.source.empty()) throw ConfigError("sweep needs --source");
  if (o.targets.empty()) throw ConfigError("sweep needs at least one --targets model");
  const auto kind = harness::parse_sweep_kind(o.kind);
  // Every model is loaded once and addressed by name.
  std::map<std::string, models::Model<T>> store;
  auto add = [&](const std::string& spec, const std::string& role) {
    auto [name, path] = split_named(spec);
    if (name.empty()) name = path;
    if (!store.count(name)) {
      run.input(role + ":" + name, path);
      store.emplace(name, load_model_file<T>(path));
    }
    return name;
  };
  const std::string source = add(o.source, "source");
  std::vector<std::string> targets, ensemble;
  for (const auto& t : o.targets) targets.push_back(add(t, "target"));
  for (const auto& e : o.ensemble) ensemble.push_back(add(e, "ensemble"));
  harness::ModelZoo<T> zoo;
  for (const auto& [name, m] : store) zoo.by_name[name] = &m;

  harness::ProtocolConfig cfg;
  cfg.baseline.budget.epsilon = o.epsilon;
  cfg.baseline.lr = o.baseline_lr;
  cfg.baseline.n_iters = o.baseline_iters;
  cfg.seed_iters = o.seed_iters;
  cfg.reference = o.reference;
  cfg.ensemble = ensemble;
  cfg.ila.loss = intermediate::parse_loss(o.loss);
  cfg.ila.alpha = o.alpha;
  cfg.ila.budget.epsilon = o.epsilon;
  cfg.ila.lr = o.ila_lr;
  cfg.ila.n_iters = o.ila_iters;
  cfg.candidates = o.candidates;
  cfg.layer = parse_layer(o.layer);

  const auto ds = harness::load_dataset(o.data.spec());
  const auto rep = harness::sweep(kind, o.grid, cfg, zoo, source, targets,
                                  ds.images.template cast<T>(), ds.labels, g.exec(),
                                  "manifest.json");
  io::write_text(run.path("sweep.csv"), rep.to_csv());
  run.output("sweep", "sweep.csv");
  std::cout << rep.to_csv();
  run.finish();
  return 0;
}

template <class F>
int dispatch(bool f64, F&& f) {
  return f64 ? f(double{}) : f(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intermediate-level attack workbench"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--config", g.config, "JSON options file or manifest of an earlier run");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads (results do not depend on it)");
  app.add_flag("--f64", g.f64, "run in 64-bit precision");

  TrainOpts train;
  auto* c_train = app.add_subcommand("train", "train a model");
  c_train->add_option("--arch", train.arch);
  c_train->add_option("--width", train.width);
  c_train->add_option("--num-classes", train.num_classes);
  c_train->add_option("--cifar-dir", train.cifar_dir);
  c_train->add_option("--train-count", train.train_count);
  c_train->add_option("--test-count", train.test_count);
  c_train->add_option("--separation", train.separation);
  c_train->add_option("--data-seed", train.data_seed);
  c_train->add_option("--world-seed", train.world_seed);
  c_train->add_option("--epochs", train.train.epochs);
  c_train->add_option("--batch-size", train.train.batch_size);
  c_train->add_option("--lr", train.train.lr);
  c_train->add_option("--momentum", train.train.momentum);
  c_train->add_option("--weight-decay", train.train.weight_decay);
  c_train->add_option("--schedule", train.train.schedule);
  c_train->add_option("--augment", train.train.augment);
  c_train->add_option("--flip", train.train.augment_options.flip);
  c_train->add_option("--crop-pad", train.train.augment_options.crop_pad);

  AttackOpts attack;
  auto* c_attack = app.add_subcommand("attack", "run a baseline attack on a data slice");
  c_attack->add_option("--model", attack.model);
  c_attack->add_option("--attack", attack.attack, "fgsm, ifgsm, mifgsm or multifool");
  c_attack->add_option("--ensemble", attack.ensemble, "extra multifool members");
  c_attack->add_option("--epsilon", attack.epsilon);
  c_attack->add_option("--lr", attack.lr);
  c_attack->add_option("--n-iters", attack.n_iters);
  c_attack->add_option("--momentum", attack.momentum);
  c_attack->add_option("--lambda", attack.lambda);
  add_data_options(c_attack, attack.data);

  IlaOpts ila_o;
  auto* c_ila = app.add_subcommand("ila", "fine-tune a baseline batch with ILA");
  c_ila->add_option("--model", ila_o.model);
  c_ila->add_option("--baseline", ila_o.baseline);
  c_ila->add_option("--layer", ila_o.layer, "endpoint index or auto");
  c_ila->add_option("--candidates", ila_o.candidates);
  c_ila->add_option("--loss", ila_o.loss, "ilap or ilaf");
  c_ila->add_option("--alpha", ila_o.alpha);
  c_ila->add_option("--lr", ila_o.lr);
  c_ila->add_option("--n-iters", ila_o.n_iters);
  c_ila->add_option("--epsilon", ila_o.epsilon);

  TransferOpts transfer;
  auto* c_transfer = app.add_subcommand("transfer", "evaluate batches on target models");
  c_transfer->add_option("--batches", transfer.batches);
  c_transfer->add_option("--targets", transfer.targets, "model paths, optionally name=path");

  AngleOpts angle;
  auto* c_angle = app.add_subcommand("angle", "feature-delta angles between two batches");
  c_angle->add_option("--model", angle.model);
  c_angle->add_option("--batch-a", angle.batch_a);
  c_angle->add_option("--batch-b", angle.batch_b);

  BoundaryOpts boundary;
  auto* c_boundary = app.add_subcommand("boundary", "decision labels on a perturbation plane");
  c_boundary->add_option("--model", boundary.model);
  c_boundary->add_option("--batch-a", boundary.batch_a);
  c_boundary->add_option("--batch-b", boundary.batch_b);
  c_boundary->add_option("--index", boundary.index);
  c_boundary->add_option("--extent", boundary.extent);
  c_boundary->add_option("--resolution", boundary.resolution);
  c_boundary->add_flag("--random-v", boundary.random_v, "second direction: random, orthogonal to the first");

  SweepOpts sweep;
  auto* c_sweep = app.add_subcommand("sweep", "baseline + ILA + transfer over a grid");
  c_sweep->add_option("--kind", sweep.kind, "epsilon, lr, alpha or reference");
  c_sweep->add_option("--grid", sweep.grid);
  c_sweep->add_option("--source", sweep.source, "model path, optionally name=path");
  c_sweep->add_option("--targets", sweep.targets);
  c_sweep->add_option("--ensemble", sweep.ensemble);
  c_sweep->add_option("--reference", sweep.reference);
  c_sweep->add_option("--layer", sweep.layer);
  c_sweep->add_option("--candidates", sweep.candidates);
  c_sweep->add_option("--loss", sweep.loss);
  c_sweep->add_option("--alpha", sweep.alpha);
  c_sweep->add_option("--epsilon", sweep.epsilon);
  c_sweep->add_option("--baseline-lr", sweep.baseline_lr);
  c_sweep->add_option("--baseline-iters", sweep.baseline_iters);
  c_sweep->add_option("--seed-iters", sweep.seed_iters);
  c_sweep->add_option("--ila-lr", sweep.ila_lr);
  c_sweep->add_option("--ila-iters", sweep.ila_iters);
  add_data_options(c_sweep, sweep.data);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kConfiguration);
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!g.config.empty()) {
      const auto cfg = read_config(g.config, sub->get_name());
      apply_config(sub, cfg.options);
      if (app.get_option("--seed")->count() == 0 && cfg.seed) g.seed = *cfg.seed;
      if (app.get_option("--f64")->count() == 0 && cfg.options.contains("f64")) {
        g.f64 = cfg.options.at("f64").get<bool>();
      }
    }
    const std::string name = sub->get_name();
    return dispatch(g.f64, [&](auto tag) -> int {
      using T = decltype(tag);
      if (name == "train") return cmd_train<T>(g, train);
      if (name == "attack") return cmd_attack<T>(g, attack);
      if (name == "ila") return cmd_ila<T>(g, ila_o);
      if (name == "transfer") return cmd_transfer<T>(g, transfer);
      if (name == "angle") return cmd_angle<T>(g, angle);
      if (name == "boundary") return cmd_boundary<T>(g, boundary);
      return cmd_sweep<T>(g, sweep);
    });
  } catch (const ila::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: configuration: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kConfiguration);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: configuration: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kConfiguration);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  }
}
