#include "dempc/ident.hpp"

#include "dempc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

namespace dempc {

OperatingPoint DriveCycle::at(double t) const {
  if (n_e.empty()) throw DomainError("drive cycle '" + name + "' is empty");
  double pos = std::clamp(t / dt, 0.0, static_cast<double>(size() - 1));
  auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= size()) return {n_e.back(), w_inj_trg.back()};
  double a = pos - static_cast<double>(i);
  return {n_e[i] + a * (n_e[i + 1] - n_e[i]), w_inj_trg[i] + a * (w_inj_trg[i + 1] - w_inj_trg[i])};
}

void DriveCycle::validate(const EnvelopeConfig& env) const {
  if (n_e.empty()) throw DomainError("drive cycle '" + name + "' is empty");
  if (n_e.size() != w_inj_trg.size()) throw DomainError("drive cycle '" + name + "' has ragged columns");
  if (!(dt > 0)) throw DomainError("drive cycle '" + name + "' has a non-positive period");
  for (std::size_t k = 0; k < size(); ++k) {
    if (!(n_e[k] >= env.n_min && n_e[k] <= env.n_max))
      throw DomainError("drive cycle '" + name + "': speed outside the envelope at sample " + std::to_string(k));
    if (!(w_inj_trg[k] >= env.w_min && w_inj_trg[k] <= env.w_max))
      throw DomainError("drive cycle '" + name + "': fuel outside the envelope at sample " + std::to_string(k));
  }
}

namespace {

// Platform-independent uniform draws for the bundled cycles.
class CycleRng {
 public:
  explicit CycleRng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double a, double b) { return a + (b - a) * static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 gen_;
};

// Appends samples moving linearly from the last value to (n, w) over `ramp`
// seconds, then holding until `duration` has elapsed.
void segment(DriveCycle& c, double n, double w, double ramp, double duration) {
  double n0 = c.n_e.back(), w0 = c.w_inj_trg.back();
  auto steps = static_cast<int>(std::lround(duration / c.dt));
  for (int k = 1; k <= steps; ++k) {
    double t = k * c.dt;
    double a = ramp > 0 ? std::min(1.0, t / ramp) : 1.0;
    c.n_e.push_back(n0 + a * (n - n0));
    c.w_inj_trg.push_back(w0 + a * (w - w0));
  }
}

}  // namespace

DriveCycle urban_cycle() {
  DriveCycle c{"urban", 0.2, {700.0}, {10.0}};
  CycleRng rng(0x75726261);
  segment(c, 700.0, 10.0, 0.0, 4.0);
  while (c.duration() < 300.0 - 1e-9) {
    double left = 300.0 - c.duration();
    if (rng.uniform(0, 1) < 0.15) {
      segment(c, 650.0, 8.0, 1.0, std::min(left, rng.uniform(3.0, 6.0)));
      continue;
    }
    double n = std::round(rng.uniform(800.0, 1600.0));
    double w = std::round(rng.uniform(15.0, 100.0));
    double dur = std::min(left, std::round(rng.uniform(4.0, 12.0)));
    // Speed moves on a 2 s ramp; fuel steps in the first sample.
    double n0 = c.n_e.back();
    segment(c, n0, w, 0.0, std::min(dur, 0.2));
    if (dur > 0.2) segment(c, n, w, 2.0, dur - 0.2);
  }
  return c;
}

DriveCycle highway_cycle() {
  DriveCycle c{"highway", 0.2, {1300.0}, {40.0}};
  CycleRng rng(0x68696768);
  segment(c, 1300.0, 40.0, 0.0, 4.0);
  while (c.duration() < 300.0 - 1e-9) {
    double left = 300.0 - c.duration();
    double n = std::round(rng.uniform(1200.0, 2100.0));
    double w = std::round(rng.uniform(30.0, 120.0));
    double ramp = rng.uniform(2.0, 8.0);
    double dur = std::min(left, std::round(ramp + rng.uniform(4.0, 14.0)));
    segment(c, n, w, ramp, dur);
  }
  return c;
}

DriveCycle builtin_cycle(const std::string& name) {
  if (name == "urban") return urban_cycle();
  if (name == "highway") return highway_cycle();
  throw DomainError("unknown builtin cycle '" + name + "'");
}

std::vector<std::string> builtin_cycle_names() { return {"urban", "highway"}; }

// ---------------------------------------------------------------------------

namespace {

Episode run_cycle(const PlantConfig& cfg, const InnerLoopConfig& inner_cfg, const TargetMaps& targets,
                  const NnParams& fnn, const DriveCycle& cycle, const ExcitationConfig& ex, std::uint64_t seed,
                  std::vector<std::string>& warnings) {
  Episode ep;
  ep.name = cycle.name;
  ep.dt = cfg.control_period;
  const int sub = inner_steps_per_control(inner_cfg, cfg);
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

  Plant plant(cfg);
  const OperatingPoint op0 = cycle.at(0.0);
  plant.reset_to_equilibrium(op0);
  InnerLoop inner(inner_cfg, cfg.egr_table, cfg.vgt_table);
  ActuatorCommand cmd =
      ActuatorCommand{lut_query(cfg.egr_table, op0.n_e, op0.w_inj), lut_query(cfg.vgt_table, op0.n_e, op0.w_inj)}
          .clamped();
  inner.reset({0, 0, cmd});
  double w_prev = op0.w_inj;
  const auto steps = static_cast<std::size_t>(std::floor(cycle.duration() / cfg.control_period + 1e-9));
  double hold_t = 0, hold_len = 0, p_off = 0, chi_off = 0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * cfg.control_period;
    const OperatingPoint op = cycle.at(t);
    if (hold_t >= hold_len) {
      p_off = uniform(-ex.p_amplitude, ex.p_amplitude);
      chi_off = uniform(-ex.chi_amplitude, ex.chi_amplitude);
      hold_len = uniform(ex.hold_min, ex.hold_max);
      hold_t = 0;
    }
    hold_t += cfg.control_period;
    const double p_sp = std::clamp(lut_query(targets.p_im, op.n_e, op.w_inj) + p_off, cfg.envelope.p_im_min,
                                   cfg.envelope.p_im_max);
    const double chi_sp = std::clamp(lut_query(targets.chi_egr, op.n_e, op.w_inj) + chi_off, 0.0, cfg.envelope.chi_max);
    try {
      const OperatingPoint meas_op{op.n_e, w_prev};
      const EmissionsState x = plant_emissions(fnn, plant.state(), cmd, meas_op, static_extras(cfg.maps, meas_op)).value;
      double p_sum = 0, chi_sum = 0;
      for (int j = 0; j < sub; ++j) {
        cmd = inner.step({p_sp, chi_sp}, {plant.p_im(), plant.chi_egr()}, op);
        plant.advance(cmd, op, inner_cfg.period);
        p_sum += plant.p_im();
        chi_sum += plant.chi_egr();
      }
      ep.states.push_back(x);
      ep.inputs.push_back({p_sum / sub, chi_sum / sub, op.n_e, op.w_inj});
      w_prev = op.w_inj;
    } catch (const std::exception& e) {
      warnings.push_back("cycle '" + cycle.name + "' truncated at t = " + std::to_string(t) + " s: " + e.what());
      break;
    }
  }
  return ep;
}

}  // namespace

IdentResult generate_ident_data(const PlantConfig& plant, const InnerLoopConfig& inner, const TargetMaps& targets,
                                const NnParams& fnn, const std::vector<DriveCycle>& cycles,
                                const ExcitationConfig& excitation, std::uint64_t seed, unsigned threads) {
  if (!(excitation.hold_min > 0) || excitation.hold_max < excitation.hold_min)
    throw DomainError("invalid excitation hold range");
  if (excitation.p_amplitude < 0 || excitation.chi_amplitude < 0) throw DomainError("negative excitation amplitude");
  for (const auto& c : cycles) c.validate(plant.envelope);
  IdentResult out;
  out.data.episodes.resize(cycles.size());
  std::vector<std::vector<std::string>> warnings(cycles.size());
  auto job = [&](std::size_t i) {
    out.data.episodes[i] = run_cycle(plant, inner, targets, fnn, cycles[i], excitation, seed + 7919 * i, warnings[i]);
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (threads <= 1 || cycles.size() <= 1) {
    for (std::size_t i = 0; i < cycles.size(); ++i) job(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < cycles.size(); ++i) pool.emplace_back(job, i);
    for (auto& t : pool) t.join();
  }
  for (auto& w : warnings) out.warnings.insert(out.warnings.end(), w.begin(), w.end());
  return out;
}

RnnValidation validate_rnn_against_plant(const NnParams& rnn, const TrajectoryDataset& data,
                                         const std::vector<EpisodeRange>& ranges) {
  RnnValidation v;
  for (const auto& r : ranges) {
    const Episode& ep = data.episodes.at(r.episode);
    if (r.end > ep.size() || r.begin >= r.end) continue;
    EmissionsState x = ep.states[r.begin];
    for (std::size_t t = r.begin; t + 1 < r.end; ++t) {
      x = rnn_step(rnn, x, ep.inputs[t]);
      v.nox_mae += std::abs(x.nox - ep.states[t + 1].nox);
      v.soot_mae += std::abs(x.soot - ep.states[t + 1].soot);
      v.steps += 1;
    }
  }
  if (v.steps == 0) throw DomainError("validate_rnn_against_plant needs a segment with at least two samples");
  v.nox_mae /= static_cast<double>(v.steps);
  v.soot_mae /= static_cast<double>(v.steps);
  return v;
}

}  // namespace dempc
