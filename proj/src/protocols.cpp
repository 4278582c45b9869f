#include "stmchain/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "stmchain/parallel.hpp"

namespace stmchain {

void SweepTable::add(double xv, std::vector<double> values) {
  if (values.size() != columns.size()) throw std::invalid_argument("row width does not match the table columns");
  x.push_back(xv);
  rows.push_back(std::move(values));
}

void SweepTable::sort_rows() {
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> xs;
  std::vector<std::vector<double>> rs;
  for (auto i : order) {
    xs.push_back(x[i]);
    rs.push_back(rows[i]);
  }
  x.swap(xs);
  rows.swap(rs);
}

std::size_t SweepTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw std::out_of_range("no column named " + name);
}

std::vector<double> SweepTable::column(const std::string& name) const {
  const auto c = column_index(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

QuantumState transmission_initial_state(const HamiltonianModel& model) {
  const int n = model.space.chain_length();
  std::vector<int> chain(static_cast<std::size_t>(n), 0);
  chain[0] = 1;
  if (!model.space.has_tip()) return basis_ket(chain, model.space);
  return product_state(fe_ground_state(model.params), chain, model.space);
}

ModelParams variant_params(const ModelParams& base, const std::string& variant) {
  ModelParams p = base;
  if (variant == "exchange") {
    p.dipolar = false;
  } else if (variant == "dipolar") {
    p.dipolar = true;
    p.field.b.setZero();
  } else if (variant == "dipolar-field") {
    p.dipolar = true;
  } else {
    throw std::invalid_argument("unknown variant " + variant);
  }
  return p;
}

namespace {

TimeGrid window(const ExperimentConfig& c, double t_max) { return {0.0, t_max, c.time.dt}; }

std::string fmt_short(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

Vec3 field_direction(const ModelParams& p) {
  const double n = p.field.b.norm();
  return n > 0.0 ? Vec3(p.field.b / n) : Vec3(0.0, 0.0, 1.0);
}

}  // namespace

AutonomousResult autonomous_transfer(const ExperimentConfig& config) {
  AutonomousResult result;
  result.table.x_column = "n_chain";
  for (const auto& v : config.autonomous.variants) {
    result.table.columns.push_back("yield_" + v);
    result.table.columns.push_back("t_best_" + v + "_ns");
  }
  struct Job {
    int n;
    std::string variant;
  };
  std::vector<Job> jobs;
  for (int n : config.autonomous.n_list) {
    for (const auto& v : config.autonomous.variants) jobs.push_back({n, v});
  }
  std::vector<TrajectoryResult> trajs(jobs.size());
  parallel_for(jobs.size(), config.threads, [&](std::size_t i) {
    ModelParams p = variant_params(config.system, jobs[i].variant);
    p.geometry.n_chain = jobs[i].n;
    const auto model = build_static_hamiltonian(p);
    trajs[i] = evolve_static(model.h_static, transmission_initial_state(model), window(config, config.time.t_max));
  });
  std::size_t k = 0;
  for (int n : config.autonomous.n_list) {
    std::vector<double> row;
    for (const auto& v : config.autonomous.variants) {
      const auto peak = max_yield(trajs[k]);
      row.push_back(peak.value);
      row.push_back(peak.time);
      result.trajectories.push_back({"N" + std::to_string(n) + "_" + v, std::move(trajs[k])});
      ++k;
    }
    result.table.add(n, std::move(row));
  }
  result.table.sort_rows();
  return result;
}

FieldScanResult field_scan(const ExperimentConfig& config) {
  FieldScanResult result;
  result.table.x_column = "field_T";
  result.table.columns = {"best_yield", "t_best_ns", "sz_std", "sz_mean"};
  const Vec3 dir = field_direction(config.system);
  const auto& bs = config.field_scan.b_list;
  std::vector<std::vector<double>> rows(bs.size());
  parallel_for(bs.size(), config.threads, [&](std::size_t i) {
    ModelParams p = config.system;
    p.field.b = bs[i] * dir;
    const auto model = build_static_hamiltonian(p);
    const auto traj = evolve_static(model.h_static, transmission_initial_state(model), window(config, config.time.t_max));
    const auto peak = max_yield(traj);
    const auto sz = sz_statistics(traj);
    rows[i] = {peak.value, peak.time, sz.std_dev, sz.mean};
  });
  for (std::size_t i = 0; i < bs.size(); ++i) result.table.add(bs[i], rows[i]);
  result.table.sort_rows();

  const auto sd = result.table.column("sz_std");
  if (!sd.empty()) {
    const double ref = sd.front();
    for (std::size_t i = 0; i < sd.size(); ++i) {
      bool stable = true;
      for (std::size_t j = i; j < sd.size(); ++j) stable = stable && sd[j] <= 0.05 * ref;
      if (stable) {
        result.stable_from = result.table.x[i];
        break;
      }
    }
  }
  return result;
}

std::optional<double> coupling_zero(const ModelParams& params, double lo, double hi) {
  const double clo = tip_zz_coupling(lo, params);
  const double chi = tip_zz_coupling(hi, params);
  if (clo * chi > 0.0) return std::nullopt;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo;
  double b = hi;
  double c = b - g * (b - a);
  double d = a + g * (b - a);
  auto f = [&](double z) { return std::abs(tip_zz_coupling(z, params)); };
  double fc = f(c);
  double fd = f(d);
  for (int it = 0; it < 200 && b - a > 1e-10; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

TipScanResult tip_scan(const ExperimentConfig& config) {
  TipScanResult result;
  auto& t = result.table;
  t.x_column = "z_tip_A";
  const auto& alphas = config.tip_scan.alpha_list;
  const bool single = alphas.size() == 1 && alphas[0] == 1.0;
  for (double a : alphas) {
    const std::string tag = single ? "" : "_a" + fmt_short(a);
    t.columns.push_back("best_yield" + tag);
    t.columns.push_back("t_best" + tag + "_ns");
  }
  const auto& zs = config.tip_scan.z_list;
  std::vector<std::vector<double>> rows(zs.size());
  parallel_for(zs.size(), config.threads, [&](std::size_t i) {
    ModelParams p = config.system;
    p.geometry.with_tip = true;
    p.geometry.tip_height = zs[i];
    const auto model = build_static_hamiltonian(p);
    const auto traj = evolve_static(model.h_static, transmission_initial_state(model), window(config, config.time.t_max));
    for (double a : alphas) {
      const auto peak = max_yield(traj, a * config.time.t_max + 1e-9);
      rows[i].push_back(peak.value);
      rows[i].push_back(peak.time);
    }
  });
  for (std::size_t i = 0; i < zs.size(); ++i) t.add(zs[i], rows[i]);
  t.sort_rows();

  // Strongest interior local maximum of the first yield column inside the window.
  const auto y = t.column(t.columns[0]);
  std::optional<std::size_t> best;
  for (std::size_t i = 1; i + 1 < y.size(); ++i) {
    if (t.x[i] < config.tip_scan.notin_lo || t.x[i] > config.tip_scan.notin_hi) continue;
    if (y[i] > y[i - 1] && y[i] >= y[i + 1] && (!best || y[i] > y[*best])) best = i;
  }
  if (best) {
    result.notin_peak = t.x[*best];
    ModelParams p = config.system;
    const auto zero = coupling_zero(p, t.x[*best - 1], t.x[*best + 1]);
    result.notin = zero ? zero : result.notin_peak;
  }
  return result;
}

SweepTable waiting_time_study(const ExperimentConfig& config) {
  SweepTable t;
  t.x_column = "alpha";
  t.columns = {"window_ns", "best_yield", "t_best_ns"};
  ModelParams p = config.system;
  p.geometry.with_tip = true;
  const auto model = build_static_hamiltonian(p);
  const auto traj = evolve_static(model.h_static, transmission_initial_state(model), window(config, config.time.t_max));
  for (double a : config.tip_scan.alpha_list) {
    const double w = a * config.time.t_max;
    const auto peak = max_yield(traj, w + 1e-9);
    t.add(a, {w, peak.value, peak.time});
  }
  t.sort_rows();
  return t;
}

RFResult rf_experiment(const ExperimentConfig& config) {
  ModelParams p = config.system;
  p.geometry.with_tip = true;
  const auto model = build_static_hamiltonian(p);
  const auto psi0 = transmission_initial_state(model);
  RFResult result;
  result.baseline = max_yield(evolve_static(model.h_static, psi0, window(config, config.time.t_max)));

  FrequencySweepOptions opt;
  opt.t_max = config.time.t_max;
  opt.steps_per_period = config.rf.steps_per_period;
  opt.sample_interval = config.time.dt;
  opt.refine_peaks = config.rf.refine_peaks;
  opt.threads = config.threads;
  const auto grid = log_grid(config.rf.omega_min, config.rf.omega_max, config.rf.omega_rel_step);
  const auto sweep = frequency_sweep(model, psi0, config.rf.v_rf, grid, opt);
  result.best = sweep.best;
  result.table.x_column = "omega_rad_per_ns";
  result.table.columns = {"freq_GHz", "best_yield", "t_best_ns"};
  for (const auto& pt : sweep.points) {
    result.table.add(pt.omega, {pt.omega / (2.0 * std::numbers::pi), pt.best_yield, pt.t_best});
  }
  PeriodicOptions popt;
  popt.steps_per_period = config.rf.steps_per_period;
  popt.max_step = std::numeric_limits<double>::infinity();
  popt.sample_interval = config.time.dt;
  result.best_trajectory = evolve_periodic(model, {config.rf.v_rf, sweep.best.omega, 0.0}, psi0, config.time.t_max, popt);
  return result;
}

std::vector<std::size_t> local_extrema(const TrajectoryResult& traj, ExtremumKind kind, double lo, double hi) {
  std::vector<std::size_t> out;
  const auto& y = traj.yield;
  const double sign = kind == ExtremumKind::Maxima ? 1.0 : -1.0;
  for (std::size_t i = 1; i + 1 < y.size(); ++i) {
    if (traj.times[i] < lo || traj.times[i] > hi) continue;
    const double c = sign * y[i];
    if (c <= sign * y[i - 1]) continue;
    // Walk over a plateau; it counts when the level drops afterwards.
    std::size_t j = i;
    while (j + 1 < y.size() && sign * y[j + 1] == c) ++j;
    if (j + 1 < y.size() && sign * y[j + 1] < c) out.push_back(i);
    i = j;
  }
  return out;
}

KrotovReport run_krotov(const HamiltonianModel& model, const QuantumState& psi0, Eigen::Index chain_target,
                        double duration, const OCTSettings& settings) {
  const auto steps = std::max<long>(1, std::lround(duration / settings.dt));
  const double omega = dominant_splitting(model.h_static, psi0.amplitudes());
  const auto guess = cosine_field(duration, steps, settings.guess_amplitude, omega);
  return krotov_optimize(model, psi0, chain_target, guess, settings.krotov);
}

OctResult oct_experiment(const ExperimentConfig& config) {
  ModelParams p = config.system;
  p.geometry.with_tip = true;
  const auto model = build_static_hamiltonian(p);
  const auto psi0 = transmission_initial_state(model);
  const int n = model.space.chain_length();
  const auto target = excitation_index(n, n);
  const auto& oct = config.oct;

  OctResult result;
  const double horizon = std::max(config.time.t_max, oct.window_hi);
  result.autonomous = evolve_static(model.h_static, psi0, window(config, horizon));
  auto yield_at = [&](double t) {
    const auto& ts = result.autonomous.times;
    const auto it = std::lower_bound(ts.begin(), ts.end(), t - 1e-9);
    const auto idx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - ts.begin(), static_cast<std::ptrdiff_t>(ts.size()) - 1));
    return result.autonomous.yield[idx];
  };

  std::vector<double> durations = oct.times;
  if (durations.empty()) {
    const auto kind = oct.extrema == "minima" ? ExtremumKind::Minima : ExtremumKind::Maxima;
    const auto idx = local_extrema(result.autonomous, kind, oct.window_lo, oct.window_hi);
    const auto count = std::min<std::size_t>(idx.size(), static_cast<std::size_t>(oct.extrema_count));
    for (std::size_t k = idx.size() - count; k < idx.size(); ++k) durations.push_back(result.autonomous.times[idx[k]]);
  }

  result.runs.resize(durations.size());
  parallel_for(durations.size(), config.threads, [&](std::size_t i) {
    auto& run = result.runs[i];
    run.duration = durations[i];
    run.autonomous_yield = yield_at(durations[i]);
    try {
      run.report = run_krotov(model, psi0, target, durations[i], oct);
      run.success = run.report->exact_yield >= oct.success_threshold;
    } catch (const ControlError& e) {
      run.error = e.what();
    }
  });

  auto& t = result.table;
  t.x_column = "T_ns";
  t.columns = {"autonomous_yield", "linear_yield", "exact_yield", "iterations", "converged", "max_abs_A", "success"};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& run : result.runs) {
    if (run.report) {
      const auto& r = *run.report;
      t.add(run.duration, {run.autonomous_yield, r.linear_yield, r.exact_yield, static_cast<double>(r.iterations),
                           r.converged ? 1.0 : 0.0, r.field.max_abs(), run.success ? 1.0 : 0.0});
    } else {
      t.add(run.duration, {run.autonomous_yield, nan, nan, nan, 0.0, nan, 0.0});
    }
  }
  t.sort_rows();
  return result;
}

namespace {

Vector ground_state(const Matrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success) throw NumericalError("Hermitian eigensolver did not converge");
  Vector g = es.eigenvectors().col(0);
  Eigen::Index k = 0;
  g.cwiseAbs().maxCoeff(&k);
  g *= std::conj(g(k)) / std::abs(g(k));
  return g;
}

}  // namespace

PrepareResult prepare_initial_state(const ExperimentConfig& config) {
  ModelParams on = config.system;
  on.geometry.with_tip = true;
  on.geometry.tip_height = config.prepare.tip_height;
  on.field.b = config.prepare.field_on;
  const auto model_on = build_static_hamiltonian(on);
  QuantumState start(model_on.space, ground_state(model_on.h_static));

  ModelParams off = on;
  off.field.b.setZero();
  const auto model_off = build_static_hamiltonian(off);
  const int n = model_off.space.chain_length();
  const auto target = excitation_index(n, 1);
  auto report = run_krotov(model_off, start, target, config.prepare.duration, config.oct);

  DrivenOptions opt;
  opt.sample_stride = static_cast<int>(report.field.steps());
  opt.observables.target_chain_index = target;
  opt.observables.store_states = true;
  const std::span<const double> dz(report.field.samples.data(), static_cast<std::size_t>(report.field.steps()));
  auto traj = evolve_displacement(model_off, dz, report.field.dt(), start, opt);
  Vector final_state = traj.states.back();
  final_state.normalize();
  const double fidelity = traj.yield.back();
  return {std::move(start), std::move(report), QuantumState(model_off.space, std::move(final_state)), fidelity};
}

FullResult full_protocol(const ExperimentConfig& config, const std::optional<QuantumState>& injected) {
  FullResult result;
  ModelParams p = config.system;
  p.geometry.with_tip = true;
  p.geometry.tip_height = config.full.transmit_tip_height;
  const auto model = build_static_hamiltonian(p);
  const auto ideal = transmission_initial_state(model);
  const int n = model.space.chain_length();
  const auto target = excitation_index(n, n);
  const double t_tx = config.full.transmit_duration;

  std::optional<QuantumState> start = injected;
  if (!start) {
    result.preparation = prepare_initial_state(config);
    result.preparation_fidelity = result.preparation->fidelity;
    start = result.preparation->prepared;
    result.total_time += config.prepare.duration;
  }
  if (!(start->space() == model.space)) throw std::invalid_argument("prepared state does not match the transmission system");

  const auto& mode = config.full.transmit;
  if (mode == "oct") {
    const auto report = run_krotov(model, ideal, target, t_tx, config.oct);
    result.ideal_transmission = report.exact_yield;
    result.composite = exact_field_yield(model, *start, target, report.field);
    DrivenOptions opt;
    opt.observables.target_chain_index = target;
    const std::span<const double> dz(report.field.samples.data(), static_cast<std::size_t>(report.field.steps()));
    result.transmission = evolve_displacement(model, dz, report.field.dt(), *start, opt);
  } else {
    // Read out at the instant that is best for the ideal input.
    TrajectoryResult ideal_traj;
    if (mode == "rf") {
      ExperimentConfig rc = config;
      rc.system = p;
      rc.time.t_max = t_tx;
      const auto rf = rf_experiment(rc);
      const PeriodicStepper stepper(model, config.rf.v_rf, 0.0, config.rf.steps_per_period, DriveMode::ExactNonlinear);
      ideal_traj = stepper.run(rf.best.omega, ideal, t_tx, config.time.dt);
      result.transmission = stepper.run(rf.best.omega, *start, t_tx, config.time.dt);
    } else {
      const Propagator prop(model.h_static);
      ideal_traj = evolve_static(prop, ideal, window(config, t_tx));
      result.transmission = evolve_static(prop, *start, window(config, t_tx));
    }
    const auto peak = max_yield(ideal_traj);
    result.ideal_transmission = peak.value;
    const auto& ts = result.transmission.times;
    const auto idx = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), peak.time - 1e-12) - ts.begin());
    result.composite = result.transmission.yield[std::min(idx, ts.size() - 1)];
  }
  result.total_time += t_tx;
  result.over_budget = result.total_time > config.full.budget;
  result.product_bound = result.preparation_fidelity * result.ideal_transmission;
  return result;
}

}  // namespace stmchain
