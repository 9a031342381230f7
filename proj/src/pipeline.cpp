#include "dempc/pipeline.hpp"

#include "dempc/csv.hpp"
#include "dempc/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace dempc {

namespace {

std::string hp_text(const HyperParams& hp) {
  std::ostringstream os;
  os << format_double(hp.learning_rate) << ',' << format_double(hp.momentum) << ',' << format_double(hp.decay_factor)
     << ',' << hp.decay_period << ',' << hp.epochs << ',' << hp.batch_size;
  return os.str();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
}

GridSearchReport read_grid_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  GridSearchReport r;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    r.cells.push_back({parse_double(row[t.column("momentum")]), parse_double(row[t.column("learning_rate")]),
                       parse_double(row[t.column("val_loss")])});
    if (row[t.column("best")] == "1") r.best = i;
  }
  if (r.cells.empty()) throw IoError("'" + path + "' holds no grid cells");
  return r;
}

void write_targets_csv(const std::string& path, const TargetMaps& tm) {
  CsvTable t;
  t.header = {"n_e", "w_inj", "p_im_trg", "chi_egr_trg"};
  for (std::size_t i = 0; i < tm.p_im.speed_axis.size(); ++i)
    for (std::size_t j = 0; j < tm.p_im.fuel_axis.size(); ++j)
      t.rows.push_back({format_double(tm.p_im.speed_axis[i]), format_double(tm.p_im.fuel_axis[j]),
                        format_double(tm.p_im.at(i, j)), format_double(tm.chi_egr.at(i, j))});
  write_csv(path, t);
}

}  // namespace

namespace {

void require_rnn(const SimulationSetup& s, const std::vector<ScenarioConfig>& scs) {
  for (const auto& sc : scs)
    if (sc.tag != ScenarioTag::Baseline && s.rnn.layers.empty()) throw DomainError("no RNN model; run train-rnn first");
}

}  // namespace

DriveCycle resolve_cycle(const std::string& name_or_path) {
  if (name_or_path == "case_study") return case_study_trace();
  for (const auto& n : builtin_cycle_names())
    if (n == name_or_path) return builtin_cycle(n);
  if (!fs::exists(name_or_path)) throw DomainError("'" + name_or_path + "' is neither a builtin cycle nor a file");
  return read_cycle_csv(name_or_path, fs::path(name_or_path).stem().string());
}

Workspace::Workspace(ProjectConfig cfg, std::string out_dir, bool use_cache)
    : cfg_(std::move(cfg)), dir_(std::move(out_dir)), use_cache_(use_cache) {
  cfg_.validate();
  fs::create_directories(dir_);
}

std::string Workspace::path(const std::string& relative) const {
  fs::path p = fs::path(dir_) / relative;
  fs::create_directories(p.parent_path());
  return p.string();
}

std::string Workspace::stage_key(const std::string& name, const std::string& inputs) const {
  return hex64(fnv1a64(name + '\n' + kVersion + '\n' + inputs));
}

bool Workspace::fresh(const std::string& stage, const std::string& key, const std::vector<std::string>& files) const {
  if (!use_cache_) return false;
  if (read_text((fs::path(dir_) / stage / "key.txt").string()) != key + "\n") return false;
  for (const auto& f : files)
    if (!fs::exists(fs::path(dir_) / f)) return false;
  return true;
}

void Workspace::mark(const std::string& stage, const std::string& key) { write_text(path(stage + "/key.txt"), key + "\n"); }

void Workspace::record(const std::string& stage, const std::string& key, bool cached) {
  stages_.push_back({stage, key, cached});
}

Dataset Workspace::data() {
  if (data_) return *data_;
  const std::string key =
      stage_key("data", config_section_json(cfg_, "data") + config_section_json(cfg_, "plant") +
                            std::to_string(cfg_.seeds.data) + ',' + std::to_string(cfg_.seeds.split) + ',' +
                            config_section_json(cfg_, "fnn.split") + format_double(cfg_.fnn.soot_cutoff));
  const std::vector<std::string> files{"data/steady.csv", "data/transient.csv", "data/train_split.csv"};
  if (fresh("data", key, files)) {
    data_ = read_dataset_csv(path("data/train_split.csv"));
    record("data", key, true);
  } else {
    EmissionsDatasets ds = generate_emissions_datasets(cfg_.plant, cfg_.data, cfg_.seeds.data);
    Dataset merged = merge_emissions_datasets(ds.steady, ds.transient, cfg_.fnn.soot_cutoff);
    data_ = split_dataset(merged, cfg_.fnn.split, cfg_.seeds.split);
    write_dataset_csv(path("data/steady.csv"), ds.steady);
    write_dataset_csv(path("data/transient.csv"), ds.transient);
    write_dataset_csv(path("data/train_split.csv"), *data_);
    mark("data", key);
    record("data", key, false);
  }
  data_key_ = key;
  return *data_;
}

GridSearchReport Workspace::tune() {
  if (tune_) return *tune_;
  const Dataset d = data();
  const std::string key = stage_key("tune", data_key_ + config_section_json(cfg_, "tuning") + hp_text(cfg_.fnn.hp) +
                                                std::to_string(cfg_.seeds.fnn_init));
  if (fresh("tune", key, {"tune/grid.csv"})) {
    tune_ = read_grid_csv(path("tune/grid.csv"));
    record("tune", key, true);
  } else {
    std::vector<std::pair<double, double>> grid;
    for (double m : cfg_.tuning.momenta)
      for (double lr : cfg_.tuning.learning_rates) grid.emplace_back(m, lr);
    tune_ = grid_search(grid, d, cfg_.fnn.hp, cfg_.tuning.epochs_per_cell, cfg_.seeds.fnn_init, cfg_.threads);
    write_grid_csv(path("tune/grid.csv"), *tune_);
    mark("tune", key);
    record("tune", key, false);
  }
  tune_key_ = key;
  return *tune_;
}

NnParams Workspace::train_fnn(bool tuned) {
  if (fnn_) return *fnn_;
  const Dataset d = data();
  HyperParams hp = cfg_.fnn.hp;
  if (tuned) {
    const GridCell best = tune().best_cell();
    hp.momentum = best.momentum;
    hp.learning_rate = best.learning_rate;
  }
  const std::string key = stage_key("fnn", data_key_ + hp_text(hp) + std::to_string(cfg_.seeds.fnn_init));
  const std::vector<std::string> files{"models/fnn.txt", "fnn/curve.csv", "fnn/eval.csv"};
  if (fresh("fnn", key, files)) {
    fnn_ = load_params(path("models/fnn.txt"));
    record("fnn", key, true);
  } else {
    TrainResult r = ::dempc::train_fnn(d, hp, cfg_.seeds.fnn_init);
    fnn_ = r.params;
    save_params(*fnn_, path("models/fnn.txt"));
    write_curve_csv(path("fnn/curve.csv"), r.curve);
    write_eval_csv(path("fnn/eval.csv"), evaluate_model(*fnn_, d));
    mark("fnn", key);
    record("fnn", key, false);
  }
  fnn_key_ = hex64(fnv1a64(read_text(path("models/fnn.txt"))));
  return *fnn_;
}

TargetMaps Workspace::targets() {
  if (targets_) return *targets_;
  targets_ = calibrate_targets(cfg_.plant);
  write_targets_csv(path("models/targets.csv"), *targets_);
  return *targets_;
}

TrajectoryDataset Workspace::ident() {
  if (ident_) return *ident_;
  if (!fnn_) {
    if (!fs::exists(path("models/fnn.txt"))) throw DomainError("no FNN model; run train-fnn first");
    fnn_ = load_params(path("models/fnn.txt"));
    fnn_key_ = hex64(fnv1a64(read_text(path("models/fnn.txt"))));
  }
  const std::string key =
      stage_key("ident", fnn_key_ + config_section_json(cfg_, "ident") + config_section_json(cfg_, "inner") +
                             config_section_json(cfg_, "plant") + std::to_string(cfg_.seeds.ident));
  if (fresh("ident", key, {"ident/episodes.csv"})) {
    ident_ = read_trajectories_csv(path("ident/episodes.csv"));
    record("ident", key, true);
  } else {
    std::vector<DriveCycle> cycles;
    for (int p = 0; p < cfg_.ident.passes; ++p)
      for (const auto& c : cfg_.ident.cycles) {
        cycles.push_back(builtin_cycle(c));
        cycles.back().name = c + "_" + std::to_string(p);
      }
    IdentResult r = generate_ident_data(cfg_.plant, cfg_.inner, targets(), *fnn_, cycles, cfg_.ident.excitation,
                                        cfg_.seeds.ident, cfg_.threads);
    ident_ = r.data;
    ident_warnings_ = r.warnings;
    write_trajectories_csv(path("ident/episodes.csv"), *ident_);
    std::string w;
    for (const auto& s : r.warnings) w += s + "\n";
    write_text(path("ident/warnings.txt"), w);
    mark("ident", key);
    record("ident", key, false);
  }
  ident_key_ = key;
  return *ident_;
}

NnParams Workspace::train_rnn() {
  if (rnn_) return *rnn_;
  const TrajectoryDataset d = ident();
  const int horizon = cfg_.scenarios.presets.base.horizon;
  const std::string key = stage_key("rnn", ident_key_ + config_section_json(cfg_, "rnn") + std::to_string(horizon) +
                                               ',' + std::to_string(cfg_.seeds.rnn_init));
  const std::vector<std::string> files{"models/rnn.txt", "rnn/curve.csv", "rnn/validation.csv"};
  if (fresh("rnn", key, files)) {
    rnn_ = load_params(path("models/rnn.txt"));
    record("rnn", key, true);
  } else {
    const TrajectorySplit split = split_trajectories(d, cfg_.rnn.split);
    TrainResult r = train_rnn_horizon(d, split, horizon, cfg_.rnn.hp, cfg_.seeds.rnn_init);
    rnn_ = r.params;
    save_params(*rnn_, path("models/rnn.txt"));
    write_curve_csv(path("rnn/curve.csv"), r.curve);
    CsvTable t;
    t.header = {"slice", "steps", "nox_mae", "soot_mae"};
    for (const auto& [name, ranges] : {std::pair{"validation", split.validation}, std::pair{"test", split.test}}) {
      if (ranges.empty()) continue;
      RnnValidation v = validate_rnn_against_plant(*rnn_, d, ranges);
      t.rows.push_back({name, std::to_string(v.steps), format_double(v.nox_mae), format_double(v.soot_mae)});
    }
    write_csv(path("rnn/validation.csv"), t);
    mark("rnn", key);
    record("rnn", key, false);
  }
  rnn_key_ = hex64(fnv1a64(read_text(path("models/rnn.txt"))));
  return *rnn_;
}

SimulationSetup Workspace::setup() {
  SimulationSetup s;
  s.plant = cfg_.plant;
  s.inner = cfg_.inner;
  if (!fnn_) {
    if (!fs::exists(path("models/fnn.txt"))) throw DomainError("no FNN model; run train-fnn first");
    fnn_ = load_params(path("models/fnn.txt"));
    fnn_key_ = hex64(fnv1a64(read_text(path("models/fnn.txt"))));
  }
  if (!rnn_ && fs::exists(path("models/rnn.txt"))) {
    rnn_ = load_params(path("models/rnn.txt"));
    rnn_key_ = hex64(fnv1a64(read_text(path("models/rnn.txt"))));
  }
  s.fnn = *fnn_;
  if (rnn_) s.rnn = *rnn_;
  s.targets = targets();
  return s;
}

double Workspace::soot_limit() {
  if (soot_lim_) return *soot_lim_;
  const auto& sc = cfg_.scenarios;
  if (sc.soot_percentile <= 0) {
    soot_lim_ = sc.presets.soot_lim;
    return *soot_lim_;
  }
  const SimulationSetup s = setup();
  std::vector<ScenarioConfig> runs;
  for (const auto& c : sc.soot_reference_cycles)
    runs.push_back({"baseline", ScenarioTag::Baseline, sc.presets.base, resolve_cycle(c)});
  std::vector<double> soot;
  for (const auto& r : run_scenarios(runs, s, sc.presets.soot_lim, cfg_.threads))
    for (const auto& st : r.trajectory.steps) soot.push_back(st.soot);
  soot_lim_ = percentile(soot, sc.soot_percentile);
  return *soot_lim_;
}

ScenarioConfig Workspace::scenario(const std::string& tag_text, const DriveCycle& cycle) {
  const ScenarioTag tag = scenario_tag_from_string(tag_text);
  ScenarioPresets presets = cfg_.scenarios.presets;
  presets.soot_lim = soot_limit();
  ScenarioConfig sc;
  sc.name = to_string(tag);
  sc.tag = tag;
  sc.ocp = presets.for_tag(tag);
  sc.cycle = cycle;
  return sc;
}

ScenarioResult Workspace::simulate(const std::string& tag, const DriveCycle& cycle) {
  const SimulationSetup s = setup();
  const ScenarioConfig sc = scenario(tag, cycle);
  require_rnn(s, {sc});
  ScenarioResult r = run_scenario(sc, s, soot_limit());
  const std::string log = "sim/" + cycle.name + "_" + r.scenario + ".csv";
  write_trajectory_log_csv(path(log), r.trajectory);
  r.metrics.log_paths.push_back(log);
  write_metrics_csv(path("sim/" + cycle.name + "_" + r.scenario + "_metrics.csv"), {r});
  return r;
}

std::vector<ScenarioResult> Workspace::scenarios() {
  const SimulationSetup s = setup();
  const double lim = soot_limit();
  const std::string key = stage_key("scenarios", fnn_key_ + rnn_key_ + config_section_json(cfg_, "scenarios") +
                                                     config_section_json(cfg_, "inner") +
                                                     config_section_json(cfg_, "plant") + format_double(lim));
  if (fresh("sim", key, {"sim/metrics.csv"})) {
    record("scenarios", key, true);
    return read_metrics_csv(path("sim/metrics.csv"));
  }
  std::vector<ScenarioConfig> scs;
  for (const auto& c : cfg_.scenarios.cycles) {
    const DriveCycle cycle = resolve_cycle(c);
    for (const auto& t : cfg_.scenarios.tags) scs.push_back(scenario(t, cycle));
  }
  require_rnn(s, scs);
  std::vector<ScenarioResult> runs = run_scenarios(scs, s, lim, cfg_.threads);
  for (auto& r : runs) {
    const std::string log = "sim/" + r.cycle + "_" + r.scenario + ".csv";
    write_trajectory_log_csv(path(log), r.trajectory);
    r.metrics.log_paths.push_back(log);
  }
  write_metrics_csv(path("sim/metrics.csv"), runs);
  mark("sim", key);
  record("scenarios", key, false);
  return runs;
}

std::vector<ComparisonTable> Workspace::compare(const std::vector<ScenarioResult>& runs) {
  std::vector<std::string> cycles;
  for (const auto& r : runs)
    if (std::find(cycles.begin(), cycles.end(), r.cycle) == cycles.end()) cycles.push_back(r.cycle);
  std::vector<ComparisonTable> tables;
  std::string text;
  for (const auto& c : cycles) {
    std::vector<ScenarioResult> group;
    for (const auto& r : runs)
      if (r.cycle == c) group.push_back(r);
    auto has_baseline = std::any_of(group.begin(), group.end(), [](const ScenarioResult& r) { return r.scenario == "baseline"; });
    ComparisonTable t = compare_scenarios(group, has_baseline ? "baseline" : group.front().scenario);
    write_comparison_csv(path("tables/" + c + ".csv"), t);
    text += format_comparison(t) + "\n";
    tables.push_back(std::move(t));
  }
  write_text(path("tables/comparison.txt"), text);
  return tables;
}

std::vector<ComparisonTable> Workspace::pipeline() {
  data();
  if (cfg_.tuning.enabled) tune();
  train_fnn(cfg_.tuning.enabled);
  targets();
  ident();
  train_rnn();
  auto tables = compare(scenarios());
  write_manifest();
  return tables;
}

void Workspace::write_manifest() const {
  nlohmann::json m;
  m["version"] = kVersion;
  m["config_hash"] = hex64(config_hash(cfg_));
  m["seeds"] = nlohmann::json::parse(config_section_json(cfg_, "seeds"));
  m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  m["compiler"] = __VERSION__;
  m["cxx_standard"] = __cplusplus;
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : stages_) stages.push_back({{"name", s.name}, {"key", s.key}, {"cached", s.cached}});
  m["stages"] = stages;
  if (soot_lim_) m["soot_lim"] = *soot_lim_;
  m["ident_warnings"] = ident_warnings_;
  write_text((fs::path(dir_) / "config.json").string(), to_json(cfg_) + "\n");
  write_text((fs::path(dir_) / "manifest.json").string(), m.dump(2) + "\n");
}

}  // namespace dempc
