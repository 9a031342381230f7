#include "dempc.h"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

struct Options {
  std::string config;
  std::string out = "runs/default";
  std::vector<std::string> overrides;
  bool no_cache = false;
};

class Session {
 public:
  explicit Session(const Options& o) {
    check(dempc_session_open(o.config.empty() ? nullptr : o.config.c_str(), o.out.c_str(), o.no_cache ? 0 : 1, &s_));
    for (const auto& a : o.overrides) check(dempc_session_override(s_, a.c_str()));
  }
  ~Session() { dempc_session_close(s_); }
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  dempc_session* get() const { return s_; }

  static void check(dempc_status st) {
    if (st != DEMPC_OK) throw std::runtime_error(std::string(dempc_status_name(st)) + ": " + dempc_last_error());
  }

 private:
  dempc_session* s_ = nullptr;
};

void print_file(const std::string& path) {
  std::ifstream in(path);
  if (in) std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-network economic MPC for diesel emissions"};
  app.set_version_flag("--version", dempc_version());
  app.require_subcommand(1);

  Options opt;
  app.add_option("-c,--config", opt.config, "JSON config file (defaults apply to missing keys)")->check(CLI::ExistingFile);
  app.add_option("-o,--out", opt.out, "output directory")->capture_default_str();
  app.add_option("-s,--set", opt.overrides, "override a config key, e.g. fnn.hp.epochs=50");
  app.add_flag("--no-cache", opt.no_cache, "rerun stages even when their outputs are current");

  bool tuned = false;
  auto* train_fnn = app.add_subcommand("train-fnn", "generate emissions data and train the emissions network");
  train_fnn->add_flag("--tuned", tuned, "use the best cell of the hyperparameter grid");
  auto* tune = app.add_subcommand("tune-hparams", "grid search over momentum and learning rate");
  auto* ident = app.add_subcommand("gen-ident-data", "closed-loop identification runs");
  auto* train_rnn = app.add_subcommand("train-rnn", "train the predictive network");

  std::string scenario, cycle;
  auto* simulate = app.add_subcommand("simulate", "run one scenario on one cycle");
  simulate->add_option("--scenario", scenario, "baseline, A, B, C, D or custom")->required();
  simulate->add_option("--cycle", cycle, "case_study, urban, highway or a cycle CSV")->required();

  auto* compare = app.add_subcommand("compare-scenarios", "run every configured scenario and tabulate");
  auto* pipeline = app.add_subcommand("pipeline", "every stage from data generation to tables");
  auto* show = app.add_subcommand("show-config", "print the resolved config and its hash");

  CLI11_PARSE(app, argc, argv);

  try {
    Session s(opt);
    if (*train_fnn) {
      Session::check(dempc_train_fnn(s.get(), tuned ? 1 : 0));
      print_file(opt.out + "/fnn/eval.csv");
    } else if (*tune) {
      Session::check(dempc_tune_hparams(s.get()));
      print_file(opt.out + "/tune/grid.csv");
    } else if (*ident) {
      Session::check(dempc_gen_ident_data(s.get()));
      print_file(opt.out + "/ident/warnings.txt");
    } else if (*train_rnn) {
      Session::check(dempc_train_rnn(s.get()));
      print_file(opt.out + "/rnn/validation.csv");
    } else if (*simulate) {
      dempc_metrics m{};
      Session::check(dempc_simulate(s.get(), scenario.c_str(), cycle.c_str(), &m));
      std::printf("cumulative_nox  %.6g\npeak_nox        %.6g\naverage_soot    %.6g\npeak_soot       %.6g\n"
                  "violation_ratio %.6g %%\ntotal_fuel      %.6g mg\nsolves          %d (%d converged)\n",
                  m.cumulative_nox, m.peak_nox, m.average_soot, m.peak_soot, m.violation_ratio, m.total_fuel,
                  m.solves, m.converged);
    } else if (*compare) {
      Session::check(dempc_compare_scenarios(s.get()));
      print_file(opt.out + "/tables/comparison.txt");
    } else if (*pipeline) {
      Session::check(dempc_pipeline(s.get()));
      print_file(opt.out + "/tables/comparison.txt");
    } else if (*show) {
      std::size_t need = 0;
      Session::check(dempc_session_config_json(s.get(), nullptr, 0, &need));
      std::string json(need, '\0');
      Session::check(dempc_session_config_json(s.get(), json.data(), json.size(), nullptr));
      char hash[32];
      Session::check(dempc_session_config_hash(s.get(), hash, sizeof hash));
      std::cout << json.c_str() << "\nconfig hash " << hash << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "dempc: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
