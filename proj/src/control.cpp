#include "stmchain/control.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/FFT>

#include "stmchain/parallel.hpp"

namespace stmchain {

VoltageFn rf_voltage(const RFDrive& drive) {
  if (drive.v_rf < 0.0) throw std::invalid_argument("RF amplitude must be non-negative");
  return [drive](double t) { return drive.v_rf * std::cos(drive.omega * t + drive.phase); };
}

std::vector<double> log_grid(double lo, double hi, double rel_step) {
  if (!(lo > 0.0) || !(hi >= lo) || !(rel_step > 0.0)) throw std::invalid_argument("bad log grid bounds");
  std::vector<double> out;
  const double ratio = std::log1p(rel_step);
  const auto n = static_cast<long>(std::floor(std::log(hi / lo) / ratio + 1e-9));
  for (long k = 0; k <= n; ++k) out.push_back(lo * std::exp(ratio * static_cast<double>(k)));
  return out;
}

namespace {

std::vector<SweepPoint> evaluate_omegas(const PeriodicStepper& stepper, const QuantumState& psi0,
                                        const std::vector<double>& omegas,
                                        const FrequencySweepOptions& opt) {
  std::vector<SweepPoint> out(omegas.size());
  parallel_for(omegas.size(), opt.threads, [&](std::size_t i) {
    const auto traj = stepper.run(omegas[i], psi0, opt.t_max, opt.sample_interval, opt.observables);
    const auto peak = max_yield(traj, opt.t_max);
    out[i] = {omegas[i], peak.value, peak.time};
  });
  return out;
}

}  // namespace

FrequencySweepResult frequency_sweep(const HamiltonianModel& model, const QuantumState& psi0,
                                     double v_rf, std::span<const double> omega_grid,
                                     const FrequencySweepOptions& options) {
  if (omega_grid.empty()) throw std::invalid_argument("empty frequency grid");
  for (double w : omega_grid) {
    if (!std::isfinite(w) || !(w > 0.0)) throw std::invalid_argument("frequencies must be finite and positive");
  }
  if (v_rf < 0.0) throw std::invalid_argument("RF amplitude must be non-negative");
  const PeriodicStepper stepper(model, v_rf, 0.0, options.steps_per_period, options.mode);

  std::vector<double> coarse(omega_grid.begin(), omega_grid.end());
  std::sort(coarse.begin(), coarse.end());
  auto points = evaluate_omegas(stepper, psi0, coarse, options);

  if (options.refine_peaks > 0 && options.refine_points >= 3) {
    std::vector<std::pair<double, std::size_t>> peaks;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const bool left = i == 0 || points[i].best_yield >= points[i - 1].best_yield;
      const bool right = i + 1 == points.size() || points[i].best_yield >= points[i + 1].best_yield;
      if (left && right) peaks.emplace_back(points[i].best_yield, i);
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (peaks.size() > static_cast<std::size_t>(options.refine_peaks)) peaks.resize(static_cast<std::size_t>(options.refine_peaks));
    const int half = (options.refine_points - 1) / 2;
    for (const auto& pk : peaks) {
      SweepPoint centre = points[pk.second];
      double width = centre.omega * options.refine_width;
      for (int level = 0; level < options.refine_levels; ++level) {
        std::vector<double> local;
        for (int j = -half; j <= half; ++j) {
          const double w = centre.omega + width * j / half;
          if (j != 0 && w > 0.0) local.push_back(w);
        }
        const auto res = evaluate_omegas(stepper, psi0, local, options);
        for (const auto& r : res) {
          if (r.best_yield > centre.best_yield) centre = r;
        }
        points.insert(points.end(), res.begin(), res.end());
        width /= half;
      }
    }
    std::stable_sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.omega < b.omega; });
  }

  FrequencySweepResult result;
  result.points = std::move(points);
  result.best = result.points.front();
  for (const auto& p : result.points) {
    if (p.best_yield > result.best.best_yield) result.best = p;
  }
  return result;
}

double ControlField::max_abs() const {
  double m = 0.0;
  for (double v : samples) m = std::max(m, std::abs(v));
  return m;
}

double shape_sin2(double t, double duration) {
  if (t <= 0.0 || t >= duration) return 0.0;
  const double s = std::sin(std::numbers::pi * t / duration);
  return s * s;
}

ControlField zero_field(double duration, long steps) {
  if (!(duration > 0.0) || steps < 1) throw std::invalid_argument("control field needs T > 0 and steps >= 1");
  ControlField f;
  f.duration = duration;
  f.samples.assign(static_cast<std::size_t>(steps + 1), 0.0);
  return f;
}

ControlField cosine_field(double duration, long steps, double amplitude, double omega) {
  ControlField f = zero_field(duration, steps);
  for (long k = 0; k <= steps; ++k) {
    const double t = f.time(k);
    f.samples[static_cast<std::size_t>(k)] = amplitude * shape_sin2(t, duration) * std::cos(omega * t);
  }
  return f;
}

double dominant_splitting(const Matrix& h, const Vector& psi) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success) throw NumericalError("Hermitian eigensolver did not converge");
  const RealVector weight = (es.eigenvectors().adjoint() * psi).cwiseAbs2();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(weight.size()));
  for (Eigen::Index k = 0; k < weight.size(); ++k) order[static_cast<std::size_t>(k)] = k;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return weight(a) > weight(b); });
  const auto& e = es.eigenvalues();
  const double e0 = e(order[0]);
  for (std::size_t k = 1; k < order.size(); ++k) {
    const double gap = std::abs(e(order[k]) - e0);
    if (gap > 1e-12) return gap / units::hbar;
  }
  return 0.0;
}

Matrix chain_projector(const HilbertSpace& space, Eigen::Index chain_index) {
  const Eigen::Index dc = space.chain_dim();
  if (chain_index < 0 || chain_index >= dc) throw std::out_of_range("chain index out of range");
  Matrix p = Matrix::Zero(space.dim(), space.dim());
  for (Eigen::Index m = 0; m < space.dim() / dc; ++m) p(m * dc + chain_index, m * dc + chain_index) = 1.0;
  return p;
}

namespace {

void check_field(const ControlField& f) {
  if (f.steps() < 1 || !(f.duration > 0.0)) throw std::invalid_argument("control field needs T > 0 and steps >= 1");
}

double expectation(const Matrix& p, const Vector& v) { return v.dot(p * v).real(); }

}  // namespace

Vector propagate_linear(const Matrix& h0, const Matrix& w, const Vector& psi0,
                        const ControlField& field) {
  check_field(field);
  const double tau = field.dt() / units::hbar;
  Matrix h(h0.rows(), h0.cols());
  Vector psi = psi0;
  for (long k = 0; k < field.steps(); ++k) {
    h = h0;
    h += field.samples[static_cast<std::size_t>(k)] * w;
    expm_apply(h, tau, psi);
  }
  return psi;
}

namespace {

// Power series of the step propagator in the control amplitude,
// exp(-i (h0 + f w) tau) = sum_j f^j E_j, held in the eigenbasis of h0.
class StepSeries {
 public:
  StepSeries(const Matrix& h0, const Matrix& w, double tau, double f_max) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(h0);
    if (es.info() != Eigen::Success) throw NumericalError("Hermitian eigensolver did not converge");
    basis_ = es.eigenvectors();
    const RealVector e = es.eigenvalues();
    const Eigen::Index dim = e.size();
    const double shift = e.mean();
    const Matrix w_eig = basis_.adjoint() * w * basis_;
    const double w_norm = Eigen::SelfAdjointEigenSolver<Matrix>(w_eig, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
    // Truncation order: the first omitted term must be negligible at the largest field.
    // Past order 12 the series is only trusted up to a smaller amplitude, limit().
    const double per_f = std::max(w_norm * tau, 1e-300);
    const double x = std::max(f_max, 1e-12) * per_f;
    order_ = 2;
    double term = x * x * x / 6.0;
    while (term > 1e-15 && order_ < 12) {
      ++order_;
      term *= x / (order_ + 1);
    }
    limit_ = f_max;
    if (term > 1e-15) limit_ = std::pow(1e-15 * std::tgamma(order_ + 2.0), 1.0 / (order_ + 1)) / per_f;

    // exp(a + eps b) in the algebra eps^(order+1) = 0, by scaling and squaring.
    const auto k = static_cast<std::size_t>(order_ + 1);
    const double a_norm = (e.array() - shift).abs().maxCoeff() * tau;
    const double b_norm = w_norm * tau;
    int squarings = 0;
    while (std::max(a_norm, b_norm) / std::ldexp(1.0, squarings) > 0.25) ++squarings;
    const double scale = std::ldexp(1.0, -squarings);
    Vector a(dim);
    for (Eigen::Index r = 0; r < dim; ++r) a(r) = cplx(0.0, -(e(r) - shift) * tau * scale);
    const Matrix b = cplx(0.0, -tau * scale) * w_eig;

    std::vector<Matrix> sum(k, Matrix::Zero(dim, dim));
    std::vector<Matrix> t(k, Matrix::Zero(dim, dim));
    t[0].setIdentity();
    sum[0].setIdentity();
    for (int j = 1; j < 40; ++j) {
      for (std::size_t m = k; m-- > 0;) {
        Matrix next = t[m] * a.asDiagonal();
        if (m > 0) next.noalias() += t[m - 1] * b;
        t[m] = next / static_cast<double>(j);
      }
      double biggest = 0.0;
      for (std::size_t m = 0; m < k; ++m) {
        sum[m] += t[m];
        biggest = std::max(biggest, t[m].cwiseAbs().maxCoeff());
      }
      if (biggest < 1e-18) break;
    }
    for (int s = 0; s < squarings; ++s) {
      std::vector<Matrix> sq(k, Matrix::Zero(dim, dim));
      for (std::size_t m = 0; m < k; ++m) {
        for (std::size_t i = 0; i <= m; ++i) sq[m].noalias() += sum[i] * sum[m - i];
      }
      sum.swap(sq);
    }
    const cplx global = std::polar(1.0, -shift * tau);
    phase_.resize(dim);
    for (Eigen::Index r = 0; r < dim; ++r) phase_(r) = std::polar(1.0, -e(r) * tau);
    for (std::size_t m = 1; m < k; ++m) {
      terms_.push_back(global * sum[m]);
      adjoints_.push_back(terms_.back().adjoint());
    }
    scratch_.assign(k, Vector(dim));
  }

  [[nodiscard]] const Matrix& basis() const { return basis_; }
  [[nodiscard]] double limit() const { return limit_; }

  /// Caches E_m c for the next gradient() / apply() calls.
  void prepare(const Vector& c) {
    for (std::size_t m = 0; m < terms_.size(); ++m) scratch_[m].noalias() = terms_[m] * c;
  }

  /// Re<chi| dU/df |c> at field f, for the prepared c.
  [[nodiscard]] double gradient(double f, const Vector& chi) const {
    Vector d = scratch_[0];
    double p = 1.0;
    for (std::size_t m = 1; m < terms_.size(); ++m) {
      p *= f;
      d += static_cast<double>(m + 1) * p * scratch_[m];
    }
    return chi.dot(d).real();
  }

  /// c <- U(f) c for the prepared c.
  void apply(double f, Vector& c) const {
    c.array() *= phase_.array();
    double p = 1.0;
    for (std::size_t m = 0; m < terms_.size(); ++m) {
      p *= f;
      c += p * scratch_[m];
    }
  }

  void forward(double f, Vector& c) {
    prepare(c);
    apply(f, c);
  }

  /// c <- U(f)^dagger c.
  void backward(double f, Vector& c) {
    for (std::size_t m = 0; m < adjoints_.size(); ++m) scratch_[m].noalias() = adjoints_[m] * c;
    c.array() *= phase_.conjugate().array();
    double p = 1.0;
    for (std::size_t m = 0; m < adjoints_.size(); ++m) {
      p *= f;
      c += p * scratch_[m];
    }
  }

 private:
  Matrix basis_;
  Vector phase_;
  int order_ = 2;
  double limit_ = 0.0;
  std::vector<Matrix> terms_;     // E_1 .. E_order
  std::vector<Matrix> adjoints_;
  std::vector<Vector> scratch_;
};

}  // namespace

KrotovReport krotov_linear(const Matrix& h0, const Matrix& w, const Vector& psi0,
                           const Matrix& projector, const ControlField& guess,
                           const KrotovOptions& options) {
  check_field(guess);
  const Eigen::Index dim = h0.rows();
  if (w.rows() != dim || psi0.size() != dim || projector.rows() != dim) {
    throw std::invalid_argument("Krotov operands have mismatched dimensions");
  }
  if (!(options.lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (guess.max_abs() > options.displacement_cap) throw ControlError("guess field exceeds the displacement cap");
  const long n = guess.steps();
  const double tau = guess.dt() / units::hbar;

  KrotovReport report;
  report.field = guess;
  report.field.shape = "sin2";
  auto& f = report.field.samples;
  std::vector<double> shape(static_cast<std::size_t>(n));
  for (long k = 0; k < n; ++k) shape[static_cast<std::size_t>(k)] = shape_sin2(guess.time(k), guess.duration);

  StepSeries series(h0, w, tau, options.displacement_cap);
  if (guess.max_abs() > series.limit()) throw ControlError("guess field too strong for the step expansion; reduce dt");
  const Matrix& v = series.basis();
  const Matrix p_eig = v.adjoint() * projector * v;
  const Vector c0 = v.adjoint() * psi0;

  Vector c = c0;
  for (long k = 0; k < n; ++k) series.forward(f[static_cast<std::size_t>(k)], c);
  Vector c_t = c;
  double j = expectation(p_eig, c_t);
  report.yields.push_back(j);

  double lambda = options.lambda;
  int halvings = 0;
  int rejections = 0;
  std::vector<Vector> chi(static_cast<std::size_t>(n + 1));
  std::vector<double> trial(f.size());
  int it = 1;
  if (1.0 - j < options.tol) report.converged = true;
  while (!report.converged && it <= options.max_iters) {
    c = p_eig * c_t;
    chi[static_cast<std::size_t>(n)] = c;
    for (long k = n - 1; k >= 0; --k) {
      series.backward(f[static_cast<std::size_t>(k)], c);
      chi[static_cast<std::size_t>(k)] = c;
    }
    trial = f;
    c = c0;
    for (long k = 0; k < n; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      // Sequential update: the gradient of step k uses the already updated state.
      series.prepare(c);
      const double g = series.gradient(trial[ks], chi[ks + 1]) / tau;
      trial[ks] += shape[ks] / lambda * g;
      series.apply(trial[ks], c);
    }
    const double j_new = expectation(p_eig, c);
    double peak = 0.0;
    for (double x : trial) peak = std::max(peak, std::abs(x));
    const bool too_far = peak > series.limit() && series.limit() < options.displacement_cap;
    if (!too_far && peak > options.displacement_cap) {
      throw ControlError("control displacement " + std::to_string(peak) + " A exceeds the cap of " +
                         std::to_string(options.displacement_cap) + " A");
    }
    if (too_far || j_new < j - options.monotonic_tol) {
      if (++rejections > options.max_rejections) {
        if (too_far) {
          throw ControlError("control displacement " + std::to_string(peak) + " A is beyond the step expansion range of " +
                             std::to_string(series.limit()) + " A after " + std::to_string(options.max_rejections) +
                             " lambda increases; reduce dt");
        }
        throw ControlError("Krotov iterate decreased the yield after " + std::to_string(options.max_rejections) +
                           " lambda increases");
      }
      report.lambda_log.push_back(
          {it, lambda, 2.0 * lambda, too_far ? "step beyond the expansion range rejected" : "non-monotonic iterate rejected"});
      lambda *= 2.0;
      continue;
    }
    f.swap(trial);
    c_t = c;
    const double gain = j_new - j;
    j = j_new;
    report.yields.push_back(j);
    report.iterations = it;
    ++it;
    if (gain < options.tol) {
      if (halvings < options.max_halvings && 1.0 - j > options.stall_gap) {
        report.lambda_log.push_back({report.iterations, lambda, 0.5 * lambda, "stalled update"});
        lambda *= 0.5;
        ++halvings;
      } else {
        report.converged = true;
      }
    }
  }
  report.field.lambda = lambda;
  report.linear_yield = j;
  report.exact_yield = std::numeric_limits<double>::quiet_NaN();
  return report;
}

double exact_field_yield(const HamiltonianModel& model, const QuantumState& psi0,
                         Eigen::Index target_chain_index, const ControlField& field) {
  check_field(field);
  DrivenOptions opt;
  opt.mode = DriveMode::ExactNonlinear;
  opt.sample_stride = static_cast<int>(std::min<long>(field.steps(), std::numeric_limits<int>::max()));
  opt.observables.target_chain_index = target_chain_index;
  const std::span<const double> dz(field.samples.data(), static_cast<std::size_t>(field.steps()));
  const auto traj = evolve_displacement(model, dz, field.dt(), psi0, opt);
  return traj.yield.back();
}

KrotovReport krotov_optimize(const HamiltonianModel& model, const QuantumState& psi0,
                             Eigen::Index target_chain_index, const ControlField& guess,
                             const KrotovOptions& options) {
  if (!model.space.has_tip()) throw std::invalid_argument("Krotov control needs a tip");
  if (!(psi0.space() == model.space)) throw std::invalid_argument("state and model spaces differ");
  const Matrix p = chain_projector(model.space, target_chain_index);
  auto report = krotov_linear(model.h_static, model.w_linear, psi0.amplitudes(), p, guess, options);
  report.exact_yield = exact_field_yield(model, psi0, target_chain_index, report.field);
  report.linearization_flag = report.field.max_abs() <= 0.03 && std::abs(report.exact_yield - report.linear_yield) > 0.02;
  return report;
}

Spectrum pulse_spectrum(const ControlField& field) {
  check_field(field);
  const auto n = static_cast<std::size_t>(field.steps());
  std::vector<double> in(field.samples.begin(), field.samples.begin() + static_cast<long>(n));
  std::vector<std::complex<double>> out;
  Eigen::FFT<double> fft;
  fft.fwd(out, in);
  Spectrum s;
  const double df = 1.0 / field.duration;  // GHz, since time is in ns
  double weighted = 0.0;
  double total = 0.0;
  double best = 0.0;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double scale = (k == 0 || 2 * k == n) ? 1.0 / static_cast<double>(n) : 2.0 / static_cast<double>(n);
    const double mag = std::abs(out[k]) * scale;
    const double freq = static_cast<double>(k) * df;
    s.bins.push_back({freq, mag});
    if (k == 0) continue;
    weighted += freq * mag;
    total += mag;
    if (mag > best) {
      best = mag;
      s.dominant_ghz = freq;
    }
  }
  s.centroid_ghz = total > 0.0 ? weighted / total : 0.0;
  return s;
}

namespace {

std::string fmt12(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

}  // namespace

void write_pulse(const std::string& path, const ControlField& field, const PulseMetadata& meta) {
  check_field(field);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "# format = stmchain-pulse-1\n"
      << "# shape = " << field.shape << "\n"
      << "# lambda_meV_per_A2 = " << fmt12(field.lambda) << "\n"
      << "# duration_ns = " << fmt12(field.duration) << "\n"
      << "# steps = " << field.steps() << "\n"
      << "# z_tip_A = " << fmt12(meta.z_tip) << "\n"
      << "# exact_yield = " << fmt12(meta.exact_yield) << "\n"
      << "# charge_e = " << fmt12(meta.charge) << "\n"
      << "# k_eV_per_A2 = " << fmt12(meta.k) << "\n"
      << "time_ns,displacement_A,voltage_V\n";
  const ActuatorParams act{meta.charge, meta.k};
  for (long k = 0; k <= field.steps(); ++k) {
    const double dz = field.samples[static_cast<std::size_t>(k)];
    out << fmt12(field.time(k)) << ',' << fmt12(dz) << ',' << fmt12(act.voltage(dz, meta.z_tip)) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

ControlField read_pulse(const std::string& path, PulseMetadata* meta) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, std::string> header;
  ControlField field;
  std::string line;
  bool columns = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t#");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      header[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
      continue;
    }
    if (!columns) {
      if (line.rfind("time_ns,displacement_A", 0) != 0) throw std::runtime_error(path + ": missing column header");
      columns = true;
      continue;
    }
    std::istringstream row(line);
    std::string t, dz;
    if (!std::getline(row, t, ',') || !std::getline(row, dz, ',')) throw std::runtime_error(path + ": malformed row");
    field.samples.push_back(std::stod(dz));
  }
  auto num = [&](const char* key) {
    const auto it = header.find(key);
    if (it == header.end()) throw std::runtime_error(path + ": missing header key " + key);
    return std::stod(it->second);
  };
  field.duration = num("duration_ns");
  field.lambda = num("lambda_meV_per_A2");
  if (header.count("shape")) field.shape = header["shape"];
  if (static_cast<long>(num("steps")) != field.steps()) throw std::runtime_error(path + ": step count mismatch");
  if (meta) {
    meta->z_tip = num("z_tip_A");
    meta->exact_yield = num("exact_yield");
    meta->charge = num("charge_e");
    meta->k = num("k_eV_per_A2");
  }
  return field;
}

}  // namespace stmchain
