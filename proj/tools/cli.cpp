#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <functional>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "ffsm/binary_io.hpp"
#include "ffsm/factors.hpp"
#include "ffsm/mapping.hpp"

namespace ffsm::cli {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Config:
      return kUsage;
    case ErrorKind::Numeric:
    case ErrorKind::Graph:
      return kNumeric;
    default:
      return kData;
  }
}

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

template <typename V>
V get(const json& j, const std::string& key) {
  try {
    return j.get<V>();
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const json& j) { io::write_file(path, j.dump(2) + "\n"); }

class Run {
 public:
  Run(std::string command, json config, std::uint64_t seed, fs::path out)
      : command_(std::move(command)), config_(std::move(config)), seed_(seed), out_(std::move(out)),
        started_(std::chrono::steady_clock::now()), started_at_(timestamp_utc()) {
    fs::create_directories(out_);
    write_json(out_ / "config.resolved.json", config_);
  }

  const fs::path& out() const { return out_; }

  // Timestamps live only here, so every other output is reproducible.
  void finish(std::ostream& log) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    json manifest = {{"command", command_},
                     {"config", config_},
                     {"seed", seed_},
                     {"versions", {{"ffsm", kVersion}, {"model_format", kModelFormatVersion}}},
                     {"started_at", started_at_},
                     {"wall_time_s", wall}};
    write_json(out_ / "manifest.json", manifest);
    log << command_ << ": wrote " << out_.string() << " (" << wall << " s)\n";
  }

 private:
  std::string command_;
  json config_;
  std::uint64_t seed_;
  fs::path out_;
  std::chrono::steady_clock::time_point started_;
  std::string started_at_;
};

struct Inputs {
  FeatureStack stack;
  std::vector<InventoryPoint> inventory;  // flood + non-flood
};

Inputs load_inputs(const RunConfig& cfg) {
  if (cfg.stack.empty()) throw ConfigError("config needs 'stack'");
  if (cfg.inventory.empty()) throw ConfigError("config needs 'inventory'");
  Inputs in;
  in.stack = load_stack(cfg.stack);
  in.inventory = load_inventory(cfg.inventory, &in.stack);
  std::vector<InventoryPoint> flood;
  bool has_negative = false;
  for (const auto& p : in.inventory) {
    if (p.label == 1) flood.push_back(p);
    else has_negative = true;
  }
  if (flood.empty()) throw ValueError("inventory holds no flood points");
  if (!has_negative) {
    NonfloodOptions opt;
    opt.count = flood.size();
    opt.min_distance = cfg.nonflood_buffer;
    opt.seed = cfg.seed;
    opt.patch = cfg.patch;
    const auto extra = generate_nonflood(in.stack, flood, opt);
    in.inventory.insert(in.inventory.end(), extra.begin(), extra.end());
  }
  return in;
}

json dataset_summary(const PatchDataset& ds) {
  json rejected = json::array();
  for (const auto& r : ds.rejected) {
    rejected.push_back({{"index", r.index}, {"row", r.point.row}, {"col", r.point.col}, {"reason", r.reason}});
  }
  json subsets = json::object();
  for (Subset s : {Subset::Train, Subset::Validation, Subset::Test}) {
    const auto idx = ds.indices(s);
    std::size_t pos = 0;
    for (auto i : idx) pos += ds.y[i] == 1.0f;
    subsets[to_string(s)] = {{"samples", idx.size()}, {"flood", pos}, {"nonflood", idx.size() - pos}};
  }
  return {{"samples", ds.size()}, {"rejected", rejected}, {"subsets", subsets}, {"warnings", ds.warnings}};
}

PatchDataset build_dataset(const RunConfig& cfg, const Inputs& in) {
  PatchDataset ds = extract_patches(in.stack, in.inventory, cfg.patch);
  if (ds.size() == 0) throw ValueError("no inventory point has a full patch window");
  split(ds, cfg.split, cfg.seed, cfg.stratified);
  standardize(ds);
  return ds;
}

BackboneSpec spec_for(const RunConfig& cfg, std::size_t factors) {
  BackboneSpec spec = cfg.model;
  spec.factors = factors;
  spec.patch = cfg.patch;
  return spec;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  return tc;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_synth(const SynthOptions& opt, const fs::path& out, bool force, std::ostream& log) {
  if (fs::exists(out) && fs::is_directory(out) && !fs::is_empty(out) && !force) {
    throw UsageError("output directory " + out.string() + " is not empty (use --force)");
  }
  if (opt.width == 0 || opt.height == 0) throw UsageError("--width and --height must be positive");
  if (opt.n_flood == 0) throw UsageError("--n-flood must be positive");
  json resolved = {{"seed", opt.seed},     {"width", opt.width},
                   {"height", opt.height}, {"n_flood", opt.n_flood},
                   {"n_nonflood", opt.n_nonflood.value_or(opt.n_flood)},
                   {"patch", opt.patch}};
  Run run("synth", resolved, opt.seed, out);
  const SynthResult syn = synth_generate(opt);
  save_stack(syn.stack, out / "stack.ffstack");
  save_inventory(syn.inventory, out / "inventory.csv");
  FeatureStack truth(syn.stack.width, syn.stack.height, {"planted_probability"});
  std::copy(syn.probability.begin(), syn.probability.end(), truth.data.begin());
  save_stack(truth, out / "planted_probability.ffstack");
  run.finish(log);
}

void cmd_factors(const RunConfig& cfg, std::ostream& log) {
  Run run("factors", cfg.to_json(), cfg.seed, cfg.out);
  const Inputs in = load_inputs(cfg);
  const FactorTable table = cfg.factors_full_raster ? raster_table(in.stack) : sample_table(in.stack, in.inventory);
  const OptimizationReport rep = optimize(table, cfg.corr_threshold, cfg.vif_threshold);
  rep.write_pearson_csv(run.out() / "pearson.csv");
  json j = rep.to_json();
  j["samples"] = table.rows;
  j["mode"] = cfg.factors_full_raster ? "raster" : "points";
  write_json(run.out() / "factors.json", j);
  run.finish(log);
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  Run run("train", cfg.to_json(), cfg.seed, cfg.out);
  const Inputs in = load_inputs(cfg);
  const PatchDataset ds = build_dataset(cfg, in);
  Model<float> model = Model<float>::build(spec_for(cfg, ds.factors.size()), cfg.seed);
  const TrainReport rep = train(model, ds, train_config(cfg));
  save_model(model, run.out() / "model.ffsm");
  json j = rep.to_json();
  j["dataset"] = dataset_summary(ds);
  j["param_count"] = model.param_count();
  write_json(run.out() / "train_report.json", j);
  run.finish(log);
}

void cmd_eval(const RunConfig& cfg, const fs::path& model_path, std::ostream& log) {
  Run run("eval", cfg.to_json(), cfg.seed, cfg.out);
  Model<float> model = load_model(model_path);
  const Inputs in = load_inputs(cfg);
  PatchDataset ds = extract_patches(in.stack, in.inventory, cfg.patch);
  if (model.standardization().factor_names != ds.factors) {
    throw ConfigError("model factor order does not match the stack");
  }
  split(ds, cfg.split, cfg.seed, cfg.stratified);
  apply_standardization(model.standardization(), ds);
  json j = json::object();
  for (Subset s : {Subset::Train, Subset::Validation, Subset::Test}) {
    if (ds.indices(s).empty()) continue;
    const EvalReport rep = evaluate(model, ds, s, cfg.threshold);
    j[to_string(s)] = rep.to_json();
    if (s == Subset::Test) write_roc_csv(rep.roc, run.out() / "roc.csv");
  }
  j["threshold"] = cfg.threshold;
  write_json(run.out() / "eval.json", j);
  run.finish(log);
}

void cmd_map(const RunConfig& cfg, const fs::path& model_path, std::ostream& log) {
  Run run("map", cfg.to_json(), cfg.seed, cfg.out);
  Model<float> model = load_model(model_path);
  if (model.spec().patch != cfg.patch) {
    throw ConfigError("model patch " + std::to_string(model.spec().patch) + " differs from config patch " +
                      std::to_string(cfg.patch));
  }
  const Inputs in = load_inputs(cfg);
  MapOptions mo;
  mo.tile_size = cfg.tile_size;
  const ProbabilityMap map = predict_map(model, in.stack, mo);
  const auto sample = jenks_sample(map, cfg.jenks_sample, cfg.seed);
  ClassStats stats;
  stats.breaks = jenks_breaks(sample, cfg.classes);
  const auto classes = classify(map, stats.breaks);
  stats.area_pct = area_stats(classes, cfg.classes);
  stats.event_pct = event_stats(classes, map.width, in.inventory, cfg.classes, &stats.events);
  stats.cells = map.valid_count();
  write_probability(map, in.stack.cell_size, run.out() / "probability.ffstack", run.out() / "probability.pgm");
  write_classes(classes, map.width, map.height, run.out() / "classes.csv", run.out() / "classes.pgm");
  write_json(run.out() / "map_stats.json", stats.to_json());
  run.finish(log);
}

void cmd_jackknife(const RunConfig& cfg, std::ostream& log) {
  Run run("jackknife", cfg.to_json(), cfg.seed, cfg.out);
  const Inputs in = load_inputs(cfg);
  const PatchDataset ds = build_dataset(cfg, in);
  JackknifeOptions opt;
  opt.mode = cfg.jackknife_mode;
  opt.jobs = cfg.jobs;
  const SensitivityReport rep = jackknife(ds, spec_for(cfg, ds.factors.size()), train_config(cfg), cfg.seed, opt);
  rep.write_csv(run.out() / "jackknife.csv");
  json j = rep.to_json();
  j["mode"] = cfg.jackknife_mode == JackknifeMode::Retrain ? "retrain" : "zero_channel";
  write_json(run.out() / "jackknife.json", j);
  run.finish(log);
}

void cmd_bench(const RunConfig& cfg, std::ostream& log) {
  Run run("bench-placements", cfg.to_json(), cfg.seed, cfg.out);
  const Inputs in = load_inputs(cfg);
  const PatchDataset ds = build_dataset(cfg, in);
  struct Cell {
    std::string label;
    BackboneSpec spec;
    EvalReport train_eval;
    EvalReport eval;
    std::size_t params = 0;
    std::optional<std::string> error;
  };
  std::vector<Cell> cells;
  const std::pair<BackboneKind, const char*> kinds[] = {
      {BackboneKind::ResNet18, "ResNet18"}, {BackboneKind::DenseNet121, "DenseNet121"}, {BackboneKind::Xception, "Xception"}};
  const std::pair<AttentionPlacement, const char*> placements[] = {{AttentionPlacement::None, "Base"},
                                                                   {AttentionPlacement::In, "+CBAM-In"},
                                                                   {AttentionPlacement::Head, "+CBAM-Head"},
                                                                   {AttentionPlacement::Tail, "+CBAM-Tail"}};
  for (const auto& [kind, kind_name] : kinds) {
    for (const auto& [placement, placement_name] : placements) {
      Cell c;
      c.spec = spec_for(cfg, ds.factors.size());
      c.spec.kind = kind;
      c.spec.placement = placement;
      if (placement != AttentionPlacement::In) c.spec.cbam_block_mask.clear();
      c.label = std::string(kind_name) + " " + placement_name;
      cells.push_back(std::move(c));
    }
  }
  const TrainConfig tc = train_config(cfg);
  std::mutex log_mutex;
  auto run_cell = [&](Cell& c) {
    try {
      Model<float> model = Model<float>::build(c.spec, cfg.seed);
      c.params = model.param_count();
      train(model, ds, tc);
      c.train_eval = evaluate(model, ds, Subset::Train, cfg.threshold);
      c.eval = evaluate(model, ds, Subset::Test, cfg.threshold);
    } catch (const std::exception& e) {
      c.error = e.what();
    }
    std::lock_guard lock(log_mutex);
    log << "bench-placements: " << c.label << (c.error ? " failed" : " done") << "\n";
  };
  const std::size_t jobs = std::clamp<std::size_t>(cfg.jobs, 1, cells.size());
  if (jobs == 1) {
    for (auto& c : cells) run_cell(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(cells[i]);
      });
    }
    for (auto& t : workers) t.join();
  }

  auto fmt = [](std::optional<double> v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::string csv = "Performance metric";
  for (const auto& c : cells) csv += "," + c.label;
  csv += "\n";
  using Getter = std::function<std::optional<double>(const EvalReport&)>;
  const std::vector<std::pair<std::string, Getter>> rows = {
      {"Accuracy", [](const EvalReport& e) { return std::optional<double>(e.metrics.accuracy); }},
      {"Precision", [](const EvalReport& e) { return e.metrics.precision; }},
      {"Recall", [](const EvalReport& e) { return e.metrics.recall; }},
      {"F1-score", [](const EvalReport& e) { return std::optional<double>(e.metrics.f1); }},
      {"AUC", [](const EvalReport& e) { return std::optional<double>(e.roc.auc); }},
  };
  json models = json::array();
  for (const auto& [set_name, report] :
       {std::pair<std::string, EvalReport Cell::*>{"Training set", &Cell::train_eval}, {"Testing set", &Cell::eval}}) {
    csv += set_name + std::string(cells.size(), ',') + "\n";
    for (const auto& [name, value] : rows) {
      csv += name;
      for (const auto& c : cells) csv += "," + (c.error ? std::string() : fmt(value(c.*report)));
      csv += "\n";
    }
  }
  csv += "Number of parameters";
  for (const auto& c : cells) csv += "," + std::to_string(c.params);
  csv += "\n";
  for (const auto& c : cells) {
    json m = {{"model", c.label}, {"spec", c.spec.to_json()}, {"params", c.params}};
    if (c.error) m["error"] = *c.error;
    else {
      m["train"] = c.train_eval.to_json();
      m["test"] = c.eval.to_json();
    }
    models.push_back(m);
  }
  io::write_file(run.out() / "bench_placements.csv", csv);
  write_json(run.out() / "bench_placements.json", {{"models", models}});
  run.finish(log);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

BackboneSpec RunConfig::default_model() {
  BackboneSpec s;
  s.base_width = 32;
  s.depth_scale = 0.25;
  return s;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  reject_unknown(j,
                 {"stack", "inventory", "out", "seed", "patch", "nonflood_buffer", "split", "model", "train",
                  "threshold", "factors", "map", "jackknife", "jobs"},
                 "");
  if (j.contains("stack")) c.stack = get<std::string>(j["stack"], "stack");
  if (j.contains("inventory")) c.inventory = get<std::string>(j["inventory"], "inventory");
  if (j.contains("out")) c.out = get<std::string>(j["out"], "out");
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j["seed"], "seed");
  if (j.contains("patch")) c.patch = get<std::size_t>(j["patch"], "patch");
  if (j.contains("nonflood_buffer")) c.nonflood_buffer = get<std::size_t>(j["nonflood_buffer"], "nonflood_buffer");
  if (j.contains("threshold")) c.threshold = get<double>(j["threshold"], "threshold");
  if (j.contains("jobs")) c.jobs = get<std::size_t>(j["jobs"], "jobs");
  if (j.contains("split")) {
    const auto& s = j["split"];
    reject_unknown(s, {"train", "validation", "test", "stratified"}, "split");
    if (s.contains("train")) c.split.train = get<double>(s["train"], "split.train");
    if (s.contains("validation")) c.split.validation = get<double>(s["validation"], "split.validation");
    if (s.contains("test")) c.split.test = get<double>(s["test"], "split.test");
    if (s.contains("stratified")) c.stratified = get<bool>(s["stratified"], "split.stratified");
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, {"kind", "base_width", "depth_scale", "growth", "placement", "reduction", "fc_hidden",
                       "cbam_block_mask"},
                   "model");
    json merged = default_model().to_json();
    for (const auto& [k, v] : m.items()) merged[k] = v;
    try {
      c.model = BackboneSpec::from_json(merged);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, {"batch_size", "initial_lr", "plateau_factor", "plateau_patience", "max_epochs",
                       "early_stop_patience", "min_lr", "optimizer"},
                   "train");
    auto& tc = c.train;
    if (t.contains("batch_size")) tc.batch_size = get<std::size_t>(t["batch_size"], "train.batch_size");
    if (t.contains("initial_lr")) tc.initial_lr = get<double>(t["initial_lr"], "train.initial_lr");
    if (t.contains("plateau_factor")) tc.plateau_factor = get<double>(t["plateau_factor"], "train.plateau_factor");
    if (t.contains("plateau_patience")) {
      tc.plateau_patience = get<std::size_t>(t["plateau_patience"], "train.plateau_patience");
    }
    if (t.contains("max_epochs")) tc.max_epochs = get<std::size_t>(t["max_epochs"], "train.max_epochs");
    if (t.contains("early_stop_patience") && !t["early_stop_patience"].is_null()) {
      tc.early_stop_patience = get<std::size_t>(t["early_stop_patience"], "train.early_stop_patience");
    }
    if (t.contains("min_lr")) tc.min_lr = get<double>(t["min_lr"], "train.min_lr");
    if (t.contains("optimizer")) {
      const auto name = get<std::string>(t["optimizer"], "train.optimizer");
      if (name == "adam") tc.optimizer = OptimizerKind::Adam;
      else if (name == "sgd") tc.optimizer = OptimizerKind::Sgd;
      else throw ConfigError("train.optimizer must be 'adam' or 'sgd'");
    }
    tc.validate();
  }
  if (j.contains("factors")) {
    const auto& f = j["factors"];
    reject_unknown(f, {"corr_threshold", "vif_threshold", "mode"}, "factors");
    if (f.contains("corr_threshold")) c.corr_threshold = get<double>(f["corr_threshold"], "factors.corr_threshold");
    if (f.contains("vif_threshold")) c.vif_threshold = get<double>(f["vif_threshold"], "factors.vif_threshold");
    if (f.contains("mode")) {
      const auto mode = get<std::string>(f["mode"], "factors.mode");
      if (mode != "points" && mode != "raster") throw ConfigError("factors.mode must be 'points' or 'raster'");
      c.factors_full_raster = mode == "raster";
    }
  }
  if (j.contains("map")) {
    const auto& m = j["map"];
    reject_unknown(m, {"classes", "jenks_sample", "tile_size"}, "map");
    if (m.contains("classes")) c.classes = get<std::size_t>(m["classes"], "map.classes");
    if (m.contains("jenks_sample")) c.jenks_sample = get<std::size_t>(m["jenks_sample"], "map.jenks_sample");
    if (m.contains("tile_size")) c.tile_size = get<std::size_t>(m["tile_size"], "map.tile_size");
  }
  if (j.contains("jackknife")) {
    const auto& k = j["jackknife"];
    reject_unknown(k, {"mode"}, "jackknife");
    if (k.contains("mode")) {
      const auto mode = get<std::string>(k["mode"], "jackknife.mode");
      if (mode == "retrain") c.jackknife_mode = JackknifeMode::Retrain;
      else if (mode == "zero_channel") c.jackknife_mode = JackknifeMode::ZeroChannel;
      else throw ConfigError("jackknife.mode must be 'retrain' or 'zero_channel'");
    }
  }
  if (c.patch == 0) throw ConfigError("patch must be positive");
  if (c.classes == 0) throw ConfigError("map.classes must be positive");
  return c;
}

json RunConfig::to_json() const {
  json model_json = model.to_json();
  model_json.erase("factors");
  model_json.erase("patch");
  return {{"stack", stack.string()},
          {"inventory", inventory.string()},
          {"out", out.string()},
          {"seed", seed},
          {"patch", patch},
          {"nonflood_buffer", nonflood_buffer},
          {"split", {{"train", split.train}, {"validation", split.validation}, {"test", split.test},
                     {"stratified", stratified}}},
          {"model", model_json},
          {"train", [&] {
             json t = train.to_json();
             t.erase("seed");
             return t;
           }()},
          {"threshold", threshold},
          {"factors", {{"corr_threshold", corr_threshold}, {"vif_threshold", vif_threshold},
                       {"mode", factors_full_raster ? "raster" : "points"}}},
          {"map", {{"classes", classes}, {"jenks_sample", jenks_sample}, {"tile_size", tile_size}}},
          {"jackknife", {{"mode", jackknife_mode == JackknifeMode::Retrain ? "retrain" : "zero_channel"}}},
          {"jobs", jobs}};
}

RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Entry point

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flash-flood susceptibility mapping with attention-augmented CNNs", "ffsm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthOptions synth;
  std::size_t n_nonflood = 0;
  fs::path synth_out;
  bool force = false;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic factor stack and inventory");
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->required();
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--width", synth.width, "Grid width in cells");
  synth_cmd->add_option("--height", synth.height, "Grid height in cells");
  synth_cmd->add_option("--n-flood", synth.n_flood, "Flood points");
  synth_cmd->add_option("--n-nonflood", n_nonflood, "Non-flood points (default: same as --n-flood)");
  synth_cmd->add_option("--patch", synth.patch, "Patch window the inventory must fit");
  synth_cmd->add_flag("--force", force, "Write into a non-empty directory");

  fs::path config_path;
  fs::path model_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, stack, inventory, placement, backbone;
  std::optional<std::size_t> max_epochs, jobs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration")->required();
    cmd->add_option("--seed", seed, "Override the config seed");
    cmd->add_option("--out", out_dir, "Override the output directory");
    cmd->add_option("--stack", stack, "Override the FFSTACK path");
    cmd->add_option("--inventory", inventory, "Override the inventory CSV path");
  };
  auto add_model = [&](CLI::App* cmd) {
    cmd->add_option("--backbone", backbone, "resnet18 | densenet121 | xception");
    cmd->add_option("--placement", placement, "none | head | tail | in");
    cmd->add_option("--max-epochs", max_epochs, "Override train.max_epochs");
  };
  auto* factors_cmd = app.add_subcommand("factors", "Pearson and VIF factor screening");
  add_common(factors_cmd);
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  add_common(train_cmd);
  add_model(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained model");
  add_common(eval_cmd);
  eval_cmd->add_option("--model", model_path, "Model file")->required();
  auto* map_cmd = app.add_subcommand("map", "Produce the susceptibility map");
  add_common(map_cmd);
  map_cmd->add_option("--model", model_path, "Model file")->required();
  auto* jack_cmd = app.add_subcommand("jackknife", "Leave-one-factor-out sensitivity");
  add_common(jack_cmd);
  add_model(jack_cmd);
  jack_cmd->add_option("--jobs", jobs, "Parallel training jobs");
  auto* bench_cmd = app.add_subcommand("bench-placements", "Train all backbone x placement combinations");
  add_common(bench_cmd);
  bench_cmd->add_option("--max-epochs", max_epochs, "Override train.max_epochs");
  bench_cmd->add_option("--jobs", jobs, "Parallel training jobs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    try {
      app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kOk;
    } catch (const CLI::CallForVersion&) {
      out << kVersion << "\n";
      return kOk;
    } catch (const CLI::ParseError& e) {
      throw UsageError(e.what());
    }

    if (synth_cmd->parsed()) {
      if (n_nonflood > 0) synth.n_nonflood = n_nonflood;
      cmd_synth(synth, synth_out, force, out);
      return kOk;
    }

    RunConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out = *out_dir;
    if (stack) cfg.stack = *stack;
    if (inventory) cfg.inventory = *inventory;
    try {
      if (backbone) cfg.model.kind = parse_backbone_kind(*backbone);
      if (placement) cfg.model.placement = parse_placement(*placement);
    } catch (const ValueError& e) {
      throw UsageError(e.what());
    }
    if (max_epochs) cfg.train.max_epochs = *max_epochs;
    if (jobs) cfg.jobs = *jobs;
    cfg.train.validate();

    if (factors_cmd->parsed()) cmd_factors(cfg, out);
    else if (train_cmd->parsed()) cmd_train(cfg, out);
    else if (eval_cmd->parsed()) cmd_eval(cfg, model_path, out);
    else if (map_cmd->parsed()) cmd_map(cfg, model_path, out);
    else if (jack_cmd->parsed()) cmd_jackknife(cfg, out);
    else if (bench_cmd->parsed()) cmd_bench(cfg, out);
    return kOk;
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error " << error_kind_name(e.kind()) << ": " << msg << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error IoError: " << e.what() << "\n";
    return kData;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace ffsm::cli
