#include "dempc/csv.hpp"

#include "dempc/errors.hpp"

#include <charconv>
#include <cstdio>
#include <limits>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dempc {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw IoError("cannot format number");
  return std::string(buf, end);
}

double parse_double(const std::string& cell) {
  if (cell == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (cell == "inf") return std::numeric_limits<double>::infinity();
  if (cell == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) throw IoError("not a number: '" + cell + "'");
  return v;
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw IoError("CSV column '" + name + "' not found");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
  out << '\n';
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (t.header.empty()) {
      t.header = split_line(line);
      continue;
    }
    auto cells = split_line(line);
    if (cells.size() != t.header.size())
      throw IoError("'" + path + "': row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(cells.size()) +
                    " cells, expected " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw IoError("'" + path + "' has no header");
  return t;
}

void write_csv(const std::string& path, const CsvTable& table) {
  auto out = open_out(path);
  write_row(out, table.header);
  for (const auto& r : table.rows) write_row(out, r);
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------

void write_dataset_csv(const std::string& path, const Dataset& data) {
  data.validate();
  CsvTable t;
  t.header = FnnInput::channel_names();
  t.header.insert(t.header.end(), {"nox", "soot", "provenance", "split"});
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index c = 0; c < data.input_dim(); ++c) row.push_back(format_double(data.inputs(c, i)));
    for (Eigen::Index c = 0; c < data.output_dim(); ++c) row.push_back(format_double(data.targets(c, i)));
    row.push_back(to_string(data.provenance[static_cast<std::size_t>(i)]));
    row.push_back(to_string(data.split[static_cast<std::size_t>(i)]));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

Dataset read_dataset_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  const auto& names = FnnInput::channel_names();
  std::vector<std::size_t> in_cols;
  for (const auto& n : names) in_cols.push_back(t.column(n));
  const std::size_t nox = t.column("nox"), soot = t.column("soot");
  const std::size_t prov = t.column("provenance"), split = t.column("split");
  Dataset d;
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  d.inputs.resize(static_cast<Eigen::Index>(names.size()), n);
  d.targets.resize(kStateDim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = t.rows[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < in_cols.size(); ++c) d.inputs(static_cast<Eigen::Index>(c), i) = parse_double(r[in_cols[c]]);
    d.targets(0, i) = parse_double(r[nox]);
    d.targets(1, i) = parse_double(r[soot]);
    d.provenance.push_back(provenance_from_string(r[prov]));
    d.split.push_back(split_from_string(r[split]));
  }
  d.validate();
  return d;
}

void write_trajectories_csv(const std::string& path, const TrajectoryDataset& data) {
  data.validate();
  CsvTable t;
  t.header = {"episode", "dt", "k", "nox", "soot", "p_im", "chi_egr", "n_e", "w_inj"};
  for (const auto& ep : data.episodes) {
    for (std::size_t k = 0; k < ep.size(); ++k) {
      const auto& x = ep.states[k];
      std::vector<std::string> row{ep.name, format_double(ep.dt), std::to_string(k), format_double(x.nox),
                                   format_double(x.soot)};
      if (k < ep.inputs.size()) {
        const auto& u = ep.inputs[k];
        for (double v : {u.p_im, u.chi_egr, u.n_e, u.w_inj}) row.push_back(format_double(v));
      } else {
        row.insert(row.end(), 4, "");
      }
      t.rows.push_back(std::move(row));
    }
  }
  write_csv(path, t);
}

TrajectoryDataset read_trajectories_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  const std::size_t ep_c = t.column("episode"), dt_c = t.column("dt"), k_c = t.column("k");
  const std::size_t cols[6] = {t.column("nox"), t.column("soot"), t.column("p_im"),
                               t.column("chi_egr"), t.column("n_e"), t.column("w_inj")};
  TrajectoryDataset d;
  for (const auto& r : t.rows) {
    if (r[k_c] == "0") {
      d.episodes.emplace_back();
      d.episodes.back().name = r[ep_c];
      d.episodes.back().dt = parse_double(r[dt_c]);
    }
    if (d.episodes.empty()) throw IoError("'" + path + "': first row must start an episode (k = 0)");
    Episode& ep = d.episodes.back();
    if (std::to_string(ep.states.size()) != r[k_c]) throw IoError("'" + path + "': non-consecutive sample index");
    ep.states.push_back({parse_double(r[cols[0]]), parse_double(r[cols[1]])});
    if (!r[cols[2]].empty())
      ep.inputs.push_back({parse_double(r[cols[2]]), parse_double(r[cols[3]]), parse_double(r[cols[4]]),
                           parse_double(r[cols[5]])});
  }
  d.validate();
  return d;
}

void write_curve_csv(const std::string& path, const std::vector<EpochLog>& curve) {
  CsvTable t;
  t.header = {"epoch", "train_loss", "val_loss", "learning_rate"};
  for (const auto& e : curve)
    t.rows.push_back({std::to_string(e.epoch), format_double(e.train_loss), format_double(e.val_loss),
                      format_double(e.learning_rate)});
  write_csv(path, t);
}

void write_grid_csv(const std::string& path, const GridSearchReport& report) {
  CsvTable t;
  t.header = {"momentum", "learning_rate", "val_loss", "best"};
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    const auto& c = report.cells[i];
    t.rows.push_back({format_double(c.momentum), format_double(c.learning_rate), format_double(c.val_loss),
                      i == report.best ? "1" : "0"});
  }
  write_csv(path, t);
}

void write_eval_csv(const std::string& path, const EvalReport& report) {
  CsvTable t;
  t.header = {"subset", "count", "nox_mae", "soot_mae", "mse"};
  auto row = [&](const std::string& name, const ChannelErrors& e) {
    t.rows.push_back({name, std::to_string(e.count), format_double(e.nox_mae), format_double(e.soot_mae),
                      format_double(e.mse)});
  };
  row("all", report.overall);
  for (const auto& [p, e] : report.by_provenance) row(to_string(p), e);
  write_csv(path, t);
}

DriveCycle read_cycle_csv(const std::string& path, const std::string& name) {
  CsvTable t = read_csv(path);
  const std::size_t tc = t.column("t"), nc = t.column("n_e"), wc = t.column("w_inj_trg");
  if (t.rows.size() < 2) throw DomainError("cycle '" + path + "' needs at least two samples");
  DriveCycle c;
  c.name = name;
  std::vector<double> times;
  for (const auto& r : t.rows) {
    times.push_back(parse_double(r[tc]));
    c.n_e.push_back(parse_double(r[nc]));
    c.w_inj_trg.push_back(parse_double(r[wc]));
  }
  c.dt = times[1] - times[0];
  if (!(c.dt > 0)) throw DomainError("cycle '" + path + "': time must increase");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (std::abs(times[k] - times[0] - static_cast<double>(k) * c.dt) > 1e-6 * std::max(1.0, times[k]))
      throw DomainError("cycle '" + path + "': samples must be uniformly spaced");
  return c;
}

void write_cycle_csv(const std::string& path, const DriveCycle& cycle) {
  CsvTable t;
  t.header = {"t", "n_e", "w_inj_trg"};
  for (std::size_t k = 0; k < cycle.size(); ++k)
    t.rows.push_back({format_double(static_cast<double>(k) * cycle.dt), format_double(cycle.n_e[k]),
                      format_double(cycle.w_inj_trg[k])});
  write_csv(path, t);
}

void write_trajectory_log_csv(const std::string& path, const Trajectory& traj) {
  CsvTable t;
  t.header = {"t",          "n_e",        "w_inj_trg",     "p_im_trg",       "chi_egr_trg", "p_im_adj",
              "chi_egr_adj", "w_inj_adj", "p_im",          "chi_egr",        "egr_pos",     "vgt_pos",
              "nox",        "soot",       "w_ext",         "status",         "iterations",  "objective",
              "max_slack",  "kkt_residual", "solve_time", "budget_exhausted", "predicted_nox", "predicted_soot"};
  for (const auto& s : traj.steps) {
    t.rows.push_back({format_double(s.t), format_double(s.n_e), format_double(s.w_inj_trg), format_double(s.p_im_trg),
                      format_double(s.chi_egr_trg), format_double(s.p_im_adj), format_double(s.chi_egr_adj),
                      format_double(s.w_inj_adj), format_double(s.p_im), format_double(s.chi_egr),
                      format_double(s.egr_pos), format_double(s.vgt_pos), format_double(s.nox), format_double(s.soot),
                      format_double(s.w_ext), s.status, std::to_string(s.iterations), format_double(s.objective),
                      format_double(s.max_slack), format_double(s.kkt_residual), format_double(s.solve_time),
                      s.budget_exhausted ? "1" : "0", format_double(s.predicted_nox), format_double(s.predicted_soot)});
  }
  write_csv(path, t);
}

void write_metrics_csv(const std::string& path, const std::vector<ScenarioResult>& runs) {
  CsvTable t;
  t.header = {"scenario",  "tag",       "cycle",           "cumulative_nox", "peak_nox",  "average_nox",
              "average_soot", "peak_soot", "violation_ratio", "total_fuel",     "converged", "solves",
              "plant_clamp_events", "log"};
  for (const auto& r : runs) {
    const auto& m = r.metrics;
    t.rows.push_back({r.scenario, to_string(r.tag), r.cycle, format_double(m.cumulative_nox), format_double(m.peak_nox),
                      format_double(m.average_nox), format_double(m.average_soot), format_double(m.peak_soot),
                      format_double(m.violation_ratio), format_double(m.total_fuel), std::to_string(r.converged),
                      std::to_string(r.solves), std::to_string(r.plant_clamp_events),
                      m.log_paths.empty() ? "" : m.log_paths.front()});
  }
  write_csv(path, t);
}

std::vector<ScenarioResult> read_metrics_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  std::vector<ScenarioResult> out;
  for (const auto& r : t.rows) {
    ScenarioResult s;
    s.scenario = r[t.column("scenario")];
    s.tag = scenario_tag_from_string(r[t.column("tag")]);
    s.cycle = r[t.column("cycle")];
    auto& m = s.metrics;
    m.cumulative_nox = parse_double(r[t.column("cumulative_nox")]);
    m.peak_nox = parse_double(r[t.column("peak_nox")]);
    m.average_nox = parse_double(r[t.column("average_nox")]);
    m.average_soot = parse_double(r[t.column("average_soot")]);
    m.peak_soot = parse_double(r[t.column("peak_soot")]);
    m.violation_ratio = parse_double(r[t.column("violation_ratio")]);
    m.total_fuel = parse_double(r[t.column("total_fuel")]);
    s.converged = std::stoi(r[t.column("converged")]);
    s.solves = std::stoi(r[t.column("solves")]);
    s.plant_clamp_events = std::stoi(r[t.column("plant_clamp_events")]);
    const std::string& log = r[t.column("log")];
    if (!log.empty()) m.log_paths.push_back(log);
    out.push_back(std::move(s));
  }
  return out;
}

void write_comparison_csv(const std::string& path, const ComparisonTable& table) {
  CsvTable t;
  t.header = {"cycle", "scenario", "reference"};
  for (const auto& name : comparison_metrics()) {
    t.header.push_back(name);
    t.header.push_back(name + "_delta_percent");
  }
  for (const auto& row : table.rows) {
    std::vector<std::string> cells{table.cycle, row.scenario, table.reference};
    for (const auto& name : comparison_metrics()) {
      double v = 0;
      const auto& m = row.metrics;
      if (name == "cumulative_nox") v = m.cumulative_nox;
      else if (name == "peak_nox") v = m.peak_nox;
      else if (name == "average_soot") v = m.average_soot;
      else if (name == "peak_soot") v = m.peak_soot;
      else if (name == "violation_ratio") v = m.violation_ratio;
      else if (name == "total_fuel") v = m.total_fuel;
      cells.push_back(format_double(v));
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", row.delta_percent.at(name));
      cells.push_back(buf);
    }
    t.rows.push_back(std::move(cells));
  }
  write_csv(path, t);
}

}  // namespace dempc
