#include "ocp_instance.hpp"
#include "support.hpp"

#include "dempc/empc.hpp"
#include "dempc/errors.hpp"

#include <doctest.h>

using namespace dempc;

namespace {

OcpProblem typical_problem() {
  OcpProblem p;
  p.x_meas = {600, 3.0};
  p.x_prev_meas = {590, 3.1};
  p.u_prev = {160, 0.2, 50};
  p.n_e = 1500;
  p.targets = {165, 0.22, 52};
  return p;
}

NnParams smooth_rnn(std::uint64_t seed) {
  NnParams p = init_params(kRnnInputDim, rnn_architecture(), seed);
  p.input_norm.offset = (Eigen::VectorXd(6) << 600, 5, 160, 0.2, 1500, 50).finished();
  p.input_norm.scale = (Eigen::VectorXd(6) << 300, 3, 30, 0.1, 400, 30).finished();
  p.output_norm.offset = p.input_norm.offset.head(2);
  p.output_norm.scale = p.input_norm.scale.head(2);
  return p;
}

void check_feasible(const OcpSolution& sol, const OcpProblem& prob, const OcpConfig& cfg) {
  const InputBounds b = ocp_bounds(prob, cfg);
  ControlInput u = prob.u_prev;
  for (std::size_t j = 0; j < sol.delta_u.size(); ++j) {
    const ControlInput& d = sol.delta_u[j];
    CHECK(std::abs(d.p_im) <= cfg.p_rate + 1e-6);
    CHECK(std::abs(d.chi_egr) <= cfg.chi_rate + 1e-8);
    u = {u.p_im + d.p_im, u.chi_egr + d.chi_egr, u.w_inj + d.w_inj};
    CHECK(u.p_im >= b.p_lo[j] - 1e-6);
    CHECK(u.p_im <= b.p_hi[j] + 1e-6);
    CHECK(u.chi_egr >= b.chi_lo[j] - 1e-8);
    CHECK(u.chi_egr <= b.chi_hi[j] + 1e-8);
    CHECK(u.w_inj >= b.w_lo - 1e-8);
    CHECK(u.w_inj <= b.w_hi + 1e-8);
  }
}

}  // namespace

TEST_CASE("OcpConfig validation") {
  CHECK_NOTHROW(OcpConfig{}.validate());
  auto bad = [](auto mutate) {
    OcpConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), DomainError);
  };
  bad([](OcpConfig& c) { c.horizon = 0; });
  bad([](OcpConfig& c) { c.alpha = 0; });
  bad([](OcpConfig& c) { c.eta = -1; });
  bad([](OcpConfig& c) { c.zeta = 0; });
  bad([](OcpConfig& c) { c.R(0, 0) = -1; });
  bad([](OcpConfig& c) { c.R(0, 1) = 1; });
  bad([](OcpConfig& c) { c.fuel_lower_frac = 0; });
  bad([](OcpConfig& c) { c.fuel_lower_frac = 1.1; });
  bad([](OcpConfig& c) { c.p_rate = 0; });
  bad([](OcpConfig& c) { c.p_min = 400; });
  bad([](OcpConfig& c) { c.chi_max = 1.5; });
  bad([](OcpConfig& c) { c.max_iter = 0; });
  bad([](OcpConfig& c) { c.step_scale(1) = 0; });
}

TEST_CASE("bounds are target boxes widened to what the rate limits can reach") {
  OcpConfig cfg;
  OcpProblem prob = typical_problem();
  InputBounds b = ocp_bounds(prob, cfg);
  REQUIRE(b.p_lo.size() == static_cast<std::size_t>(cfg.horizon));
  CHECK(b.w_hi == 52);
  CHECK(b.w_lo == doctest::Approx(0.9 * 52));
  CHECK(b.p_lo[0] == 165 - cfg.p_band);
  CHECK(b.p_hi[0] == 165 + cfg.p_band);

  // Far below the box: the lower edge follows the reachable band.
  prob.u_prev.p_im = 100;
  b = ocp_bounds(prob, cfg);
  CHECK(b.p_lo[0] == 100 + cfg.p_rate);
  CHECK(b.p_lo[1] == 100 + 2 * cfg.p_rate);
  CHECK(b.p_lo[7] == 165 - cfg.p_band);

  // Box clipped by the envelope.
  prob = typical_problem();
  prob.targets.p_im = 295;
  prob.u_prev.p_im = 295;
  b = ocp_bounds(prob, cfg);
  CHECK(b.p_hi[0] == cfg.p_max);
}

TEST_CASE("extended rollout equals the absolute recursion") {
  const NnParams rnn = smooth_rnn(3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  const ControlInput u_prev{160, 0.2, 50};
  const double n_e = 1400;
  const EmissionsState x_prev{580, 2.8};
  const EmissionsState x0 = rnn_step(rnn, x_prev, {u_prev.p_im, u_prev.chi_egr, n_e, u_prev.w_inj});
  ExtendedState xe{{x0.nox - x_prev.nox, x0.soot - x_prev.soot}, x_prev, u_prev};
  EmissionsState x = x0;
  ControlInput cur = u_prev;
  for (int k = 0; k < 8; ++k) {
    const ControlInput du{5 * u(rng), 0.02 * u(rng), 3 * u(rng)};
    cur = {cur.p_im + du.p_im, cur.chi_egr + du.chi_egr, cur.w_inj + du.w_inj};
    const ExtendedState next = extended_dynamics(rnn, xe, du, n_e);
    x = rnn_step(rnn, x, {cur.p_im, cur.chi_egr, n_e, cur.w_inj});
    CHECK(std::abs(next.absolute().nox - x.nox) <= 1e-12 * std::max(1.0, std::abs(x.nox)));
    CHECK(std::abs(next.absolute().soot - x.soot) <= 1e-12 * std::max(1.0, std::abs(x.soot)));
    CHECK(next.u_prev == cur);
    xe = next;
  }
}

TEST_CASE("stage cost terms") {
  OcpConfig cfg;
  cfg.R = Eigen::Vector3d(1, 2, 3).asDiagonal();
  const ControlInput du{1, 0.1, -2};
  ExtendedState next{{5, 0}, {100, 4}, {150, 0.25, 40}};
  const StageTargets trg{152, 0.2, 42};
  const double expect = cfg.alpha * 4 + cfg.beta * 0.0025 + cfg.gamma * 2 + cfg.eta * 105 + cfg.zeta * 0.5 +
                        (1 * 1 + 2 * 0.01 + 3 * 4);
  CHECK(stage_cost(du, 0.5, next, trg, cfg) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("merit is the objective at the smallest feasible slacks") {
  const NnParams rnn = smooth_rnn(5);
  OcpConfig cfg;
  cfg.soot_limit_active = true;
  cfg.soot_lim = 2.0;
  const OcpProblem prob = typical_problem();
  std::vector<ControlInput> du(8, ControlInput{1.0, 0.005, 0.2});
  std::vector<double> eps;
  {
    ExtendedState xe{{prob.x_meas.nox - prob.x_prev_meas.nox, prob.x_meas.soot - prob.x_prev_meas.soot},
                     prob.x_prev_meas, prob.u_prev};
    for (const auto& d : du) {
      xe = extended_dynamics(rnn, xe, d, prob.n_e);
      eps.push_back(std::max(0.0, xe.absolute().soot - cfg.soot_lim));
    }
  }
  CHECK(ocp_merit(rnn, prob, cfg, du) == doctest::Approx(ocp_objective(rnn, prob, cfg, du, eps)).epsilon(1e-12));
  CHECK_THROWS_AS(ocp_objective(rnn, prob, cfg, du, {}), StructuralError);
  CHECK_THROWS_AS(ocp_merit(rnn, prob, cfg, {}), StructuralError);
}

TEST_CASE("solve_ocp matches a brute-force grid on a linear model") {
  for (bool limit : {false, true}) {
    const testing::BruteForceInstance inst(12.0, limit);
    const auto best = inst.brute_force(1e-3);
    const OcpSolution sol = solve_ocp(inst.model.params(), inst.prob, inst.cfg);
    REQUIRE(sol.delta_u.size() == 2);
    CHECK(inst.feasible(sol.delta_u[0].p_im, sol.delta_u[1].p_im));
    CHECK(sol.delta_u[0].chi_egr == doctest::Approx(0.0));
    CHECK(sol.delta_u[0].w_inj == doctest::Approx(0.0));
    const double mine = inst.objective(sol.delta_u[0].p_im, sol.delta_u[1].p_im);
    CHECK(sol.objective == doctest::Approx(mine).epsilon(1e-10));
    CHECK(mine <= best.objective + 1e-4);
    CHECK(sol.status == SolverStatus::Converged);
  }
  // The limit moves the optimum.
  const auto free = testing::BruteForceInstance(12.0, false).brute_force(1e-3);
  const auto capped = testing::BruteForceInstance(12.0, true).brute_force(1e-3);
  CHECK(std::abs(free.dp0 - capped.dp0) > 0.05);
}

TEST_CASE("SQP iterates stay feasible and the merit never rises") {
  const NnParams rnn = smooth_rnn(7);
  for (bool limit : {false, true}) {
    OcpConfig cfg;
    cfg.soot_limit_active = limit;
    cfg.soot_lim = 2.5;
    cfg.time_budget = 0;
    OcpProblem prob = typical_problem();
    prob.u_prev.p_im = 120;  // outside the target box
    const OcpSolution sol = solve_ocp(rnn, prob, cfg);
    CHECK(sol.status != SolverStatus::InfeasibleRestored);
    check_feasible(sol, prob, cfg);
    for (std::size_t i = 1; i < sol.merit_history.size(); ++i)
      CHECK(sol.merit_history[i] <= sol.merit_history[i - 1] + 1e-12);
    CHECK(sol.predicted.size() == static_cast<std::size_t>(cfg.horizon) + 1);
    CHECK(sol.slack.size() == static_cast<std::size_t>(cfg.horizon));
    CHECK(sol.max_slack() >= 0);
    if (!limit) CHECK(sol.max_slack() == 0);
  }
}

TEST_CASE("warm start shifts by one step") {
  const NnParams rnn = smooth_rnn(9);
  OcpConfig cfg;
  cfg.time_budget = 0;
  const OcpProblem prob = typical_problem();
  const OcpSolution cold = solve_ocp(rnn, prob, cfg);
  const OcpSolution again = solve_ocp(rnn, prob, cfg, &cold, false);
  CHECK(again.iterations <= cold.iterations);
  CHECK(again.objective <= cold.objective + 1e-9);
  const OcpSolution shifted = solve_ocp(rnn, prob, cfg, &cold, true);
  CHECK(shifted.status != SolverStatus::InfeasibleRestored);
}

TEST_CASE("a time budget caps the solve") {
  const NnParams rnn = smooth_rnn(11);
  OcpConfig cfg;
  cfg.time_budget = 1e-9;
  const OcpSolution sol = solve_ocp(rnn, typical_problem(), cfg);
  CHECK(sol.budget_exhausted);
  CHECK(sol.status == SolverStatus::MaxIter);
  check_feasible(sol, typical_problem(), cfg);
}

TEST_CASE("a non-finite model falls back to holding the last input") {
  NnParams rnn = smooth_rnn(13);
  rnn.layers.back().bias(0) = 1e308;
  rnn.layers.back().weight *= 1e308;
  const OcpSolution sol = solve_ocp(rnn, typical_problem(), OcpConfig{});
  CHECK(sol.status == SolverStatus::InfeasibleRestored);
  for (const auto& d : sol.delta_u) CHECK(d == ControlInput{});
}

TEST_CASE("apply_first_move keeps fuel inside its bound") {
  const OcpConfig cfg;
  const StageTargets trg{160, 0.2, 50};
  const ControlInput up{160, 0.2, 50};
  CHECK(apply_first_move(up, {0, 0, 5}, trg, cfg).w_inj == 50);
  CHECK(apply_first_move(up, {0, 0, -20}, trg, cfg).w_inj == doctest::Approx(45));
  CHECK(apply_first_move(up, {500, 0, 0}, trg, cfg).p_im == cfg.p_max);
  CHECK(apply_first_move(up, {0, -1, 0}, trg, cfg).chi_egr == cfg.chi_min);
}

TEST_CASE("controller carries the previous input and measurement") {
  EmpcController c(smooth_rnn(15), OcpConfig{});
  c.reset({160, 0.2, 50}, {590, 3.1});
  const StageTargets trg{165, 0.22, 52};
  const EmpcStep s1 = c.step({600, 3.0}, 1500, trg);
  CHECK(c.last_input() == s1.u);
  CHECK(s1.u.w_inj <= 52);
  CHECK(s1.u.w_inj >= 0.9 * 52 - 1e-12);
  const EmpcStep s2 = c.step({605, 3.0}, 1500, trg);
  CHECK(std::abs(s2.u.p_im - s1.u.p_im) <= OcpConfig{}.p_rate + 1e-6);

  CHECK_THROWS_AS(EmpcController(init_params(kFnnInputDim, fnn_architecture(), 1), OcpConfig{}), StructuralError);
  OcpConfig bad;
  bad.horizon = 0;
  CHECK_THROWS_AS(EmpcController(smooth_rnn(1), bad), DomainError);
}

TEST_CASE("solver status names") {
  CHECK(std::string(to_string(SolverStatus::Converged)) == "converged");
  CHECK(std::string(to_string(SolverStatus::MaxIter)) == "max_iter");
  CHECK(std::string(to_string(SolverStatus::InfeasibleRestored)) == "infeasible_restored");
}
