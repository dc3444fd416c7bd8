#include "mkvcn/sde.hpp"

#include "mkvcn/errors.hpp"
#include "mkvcn/ot.hpp"

#include <cmath>
#include <stdexcept>

namespace mkvcn {
namespace {

// Cholesky factor with a clear error for unusable covariances.
Eigen::MatrixXd chol_or_throw(const Eigen::MatrixXd& cov, int d,
                              const char* what) {
  Eigen::MatrixXd c = cov;
  if (c.size() == 0) c = Eigen::MatrixXd::Identity(d, d);
  if (c.rows() == 1 && c.cols() == 1 && d > 1)
    c = c(0, 0) * Eigen::MatrixXd::Identity(d, d);
  if (c.rows() != d || c.cols() != d)
    throw std::invalid_argument(std::string(what) + ": covariance shape");
  if (!c.isApprox(c.transpose(), 1e-12))
    throw std::invalid_argument(std::string(what) + ": covariance not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument(std::string(what) +
                                ": covariance not positive definite");
  return llt.matrixL();
}

Eigen::VectorXd mean_or_zero(const Eigen::VectorXd& mean, int d,
                             const char* what) {
  if (mean.size() == 0) return Eigen::VectorXd::Zero(d);
  if (mean.size() != d)
    throw std::invalid_argument(std::string(what) + ": mean dimension");
  return mean;
}

// Common-noise increments (standard normals) for one step, d components.
Eigen::RowVectorXd common_draw(const NoiseStream& ns, std::uint64_t step,
                               Channel ch, int d) {
  Eigen::RowVectorXd z(d);
  for (int c = 0; c < d; ++c) z[c] = ns.normal(step, ch, std::uint64_t(c));
  return z;
}

void guard_state(const Eigen::MatrixXd& x, double box, double t,
                 const char* label, CoupledEnsembles& ce) {
  const double worst = x.cwiseAbs().maxCoeff();
  const bool finite = std::isfinite(x.sum());
  if (finite && worst <= 1e3) {
    ce.max_abs_coord = std::max(ce.max_abs_coord, worst);
    if (worst > box) ++ce.box_excursions;
    return;
  }
  Eigen::Index bad = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).cwiseAbs().maxCoeff();
    if (!std::isfinite(x.row(i).sum()) || m > 1e3) {
      bad = i;
      break;
    }
  }
  throw BlowUpError(std::string("blow-up in ensemble ") + label +
                        ", particle " + std::to_string(bad) + " at t=" +
                        std::to_string(t),
                    int(bad), t);
}

}  // namespace

double reflection_ramp(double u) {
  return std::clamp(2.0 * u - 1.0, 0.0, 1.0);
}

void step(CoupledEnsembles& ce, const PotentialSpec& v,
          const InteractionSpec& w, const NoisePlan& plan) {
  const int d = int(ce.a.x.cols());
  const double dt = plan.dt, sqdt = std::sqrt(dt);
  if (dt <= 0) throw std::invalid_argument("step: dt must be > 0");
  const bool has_b = ce.b.has_value();
  const auto kind = ce.mode.kind;
  if (kind == CouplingMode::Kind::reflection_1d && d != 1)
    throw std::invalid_argument("reflection_1d coupling needs d = 1");
  if ((kind == CouplingMode::Kind::reflection_1d ||
       kind == CouplingMode::Kind::mean_reflection) &&
      !(ce.mode.delta > 0))
    throw std::invalid_argument("reflection coupling needs delta > 0");
  if (!has_b && kind != CouplingMode::Kind::independent &&
      kind != CouplingMode::Kind::synchronous)
    throw std::invalid_argument("reflection coupling needs two ensembles");
  if (has_b && (kind == CouplingMode::Kind::reflection_1d ||
                kind == CouplingMode::Kind::mean_reflection) &&
      ce.b->x.rows() != ce.a.x.rows())
    throw std::invalid_argument("reflection coupling needs equal ensemble sizes");

  const NoiseStream ns(plan.seed, ce.realization);
  const std::uint64_t k = ce.step_count;
  const double t_next = double(k + 1) * dt;

  // Mixing weights are read from the state before the step.
  double pi = 0, lambda = 1;
  Eigen::RowVectorXd mirror;  // unit empirical-mean difference (mean_reflection)
  if (has_b && kind == CouplingMode::Kind::reflection_1d) {
    const double u = (ce.a.x - ce.b->x).cwiseAbs().mean() / ce.mode.delta;
    pi = reflection_ramp(u);
    lambda = std::sqrt(1.0 - pi * pi);
  } else if (has_b && kind == CouplingMode::Kind::mean_reflection) {
    const Eigen::RowVectorXd ebar =
        ce.a.x.colwise().mean() - ce.b->x.colwise().mean();
    const double norm = ebar.norm();
    pi = reflection_ramp(norm / ce.mode.delta);
    lambda = std::sqrt(1.0 - pi * pi);
    mirror = norm > 0 ? Eigen::RowVectorXd(ebar / norm)
                      : Eigen::RowVectorXd::Zero(d).eval();
  }

  // Drift from the pre-step state; a reads its interaction from the
  // auxiliary proxy when present, every other ensemble from itself.
  Eigen::MatrixXd drift_a, drift_b, drift_x, grad_buf;
  const Eigen::MatrixXd& src_a = ce.aux ? ce.aux->x : ce.a.x;
  grad_rows(v, ce.a.x, drift_a);
  interaction_rows(w, ce.a.x, src_a, grad_buf);
  drift_a = -(drift_a + grad_buf);
  if (has_b) {
    grad_rows(v, ce.b->x, drift_b);
    interaction_rows(w, ce.b->x, ce.b->x, grad_buf);
    drift_b = -(drift_b + grad_buf);
  }
  if (ce.aux) {
    grad_rows(v, ce.aux->x, drift_x);
    interaction_rows(w, ce.aux->x, ce.aux->x, grad_buf);
    drift_x = -(drift_x + grad_buf);
  }

  ce.a.x += dt * drift_a;
  if (has_b) ce.b->x += dt * drift_b;
  if (ce.aux) ce.aux->x += dt * drift_x;

  // Idiosyncratic increments.
  if (plan.sigma != 0) {
    Eigen::MatrixXd z(ce.a.x.rows(), d);
    ns.fill_normals(k, Channel::idio_a, z);
    ce.a.x += (plan.sigma * sqdt) * z;
    if (has_b) {
      if (kind == CouplingMode::Kind::independent) {
        Eigen::MatrixXd zb(ce.b->x.rows(), d);
        ns.fill_normals(k, Channel::idio_b, zb);
        ce.b->x += (plan.sigma * sqdt) * zb;
      } else {
        if (ce.b->x.rows() != z.rows())
          throw std::invalid_argument("shared idiosyncratic draws need equal N");
        ce.b->x += (plan.sigma * sqdt) * z;
      }
    }
    if (ce.aux) {
      Eigen::MatrixXd zx(ce.aux->x.rows(), d);
      ns.fill_normals(k, Channel::idio_aux, zx);
      ce.aux->x += (plan.sigma * sqdt) * zx;
    }
  }

  // Common increments, wired by mode; aux follows ensemble a.
  if (plan.sigma0 != 0) {
    const double s0 = plan.sigma0 * sqdt;
    const Eigen::RowVectorXd eta = common_draw(ns, k, Channel::common, d);
    Eigen::RowVectorXd inc_a, inc_b;
    switch (kind) {
      case CouplingMode::Kind::independent:
        inc_a = s0 * eta;
        if (has_b)
          inc_b = s0 * common_draw(ns, k, Channel::common_b, d);
        break;
      case CouplingMode::Kind::synchronous:
        inc_a = s0 * eta;
        inc_b = inc_a;
        break;
      case CouplingMode::Kind::reflection_1d: {
        const Eigen::RowVectorXd etat =
            common_draw(ns, k, Channel::common_aux, d);
        inc_a = s0 * (pi * eta + lambda * etat);
        inc_b = s0 * (-pi * eta + lambda * etat);
        break;
      }
      case CouplingMode::Kind::mean_reflection: {
        const Eigen::RowVectorXd etat =
            common_draw(ns, k, Channel::common_aux, d);
        const Eigen::RowVectorXd reflected =
            eta - 2.0 * (eta.dot(mirror)) * mirror;
        inc_a = s0 * (pi * eta + lambda * etat);
        inc_b = s0 * (pi * reflected + lambda * etat);
        break;
      }
    }
    ce.a.x.rowwise() += inc_a;
    if (has_b && inc_b.size() > 0) ce.b->x.rowwise() += inc_b;
    if (ce.aux) ce.aux->x.rowwise() += inc_a;
  }

  ++ce.step_count;
  guard_state(ce.a.x, v.box_halfwidth, t_next, "a", ce);
  if (has_b) guard_state(ce.b->x, v.box_halfwidth, t_next, "b", ce);
  if (ce.aux) guard_state(ce.aux->x, v.box_halfwidth, t_next, "aux", ce);
}

Eigen::VectorXd TrajectoryRecord::column(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == name) return columns.col(Eigen::Index(j)).head(observed);
  throw std::invalid_argument("trajectory has no column '" + name + "'");
}

TrajectoryRecord run(CoupledEnsembles& ce, const PotentialSpec& v,
                     const InteractionSpec& w, const NoisePlan& plan,
                     double duration, long observe_every,
                     std::span<const Observer> observers) {
  if (duration < 0) throw std::invalid_argument("run: duration must be >= 0");
  if (observe_every <= 0)
    throw std::invalid_argument("run: observation cadence must be positive");
  const long n_steps = std::lround(duration / plan.dt);
  if (std::abs(double(n_steps) * plan.dt - duration) > 1e-9 * std::max(1.0, duration))
    throw std::invalid_argument("run: duration must be a multiple of dt");
  if (n_steps % observe_every != 0)
    throw std::invalid_argument("run: cadence must divide the step count");
  const double t0 = double(ce.step_count) * plan.dt;

  TrajectoryRecord rec;
  if (ce.mode.kind == CouplingMode::Kind::mean_reflection && plan.sigma != 0)
    rec.warnings.push_back(
        "mean_reflection with sigma > 0 is outside the contraction regime");
  const long rows = n_steps / observe_every + 1;
  rec.times.resize(rows);
  rec.names.reserve(observers.size());
  for (const auto& o : observers) rec.names.push_back(o.name);
  rec.columns.resize(rows, Eigen::Index(observers.size()));

  auto observe = [&](long row, double t) {
    rec.times[row] = t;
    for (std::size_t j = 0; j < observers.size(); ++j)
      rec.columns(row, Eigen::Index(j)) = observers[j].eval(ce, t);
    rec.observed = int(row) + 1;
  };

  observe(0, t0);
  try {
    for (long s = 1; s <= n_steps; ++s) {
      step(ce, v, w, plan);
      if (s % observe_every == 0)
        observe(s / observe_every, t0 + double(s) * plan.dt);
    }
  } catch (BlowUpError& e) {
    rec.blew_up = true;
    rec.blow_particle = e.particle;
    rec.blow_time = e.time;
    rec.box_excursions = ce.box_excursions;
    rec.max_abs_coord = ce.max_abs_coord;
    e.partial = rec;
    throw;
  }
  rec.box_excursions = ce.box_excursions;
  rec.max_abs_coord = ce.max_abs_coord;
  return rec;
}

Ensemble sample_initial(const InitialLaw& law, int n, int d,
                        const NoisePlan& plan, std::uint32_t realization,
                        Channel init_ch, Channel center_ch) {
  if (n <= 0 || d <= 0)
    throw std::invalid_argument("sample_initial: need n, d >= 1");
  const NoiseStream ns(plan.seed, realization);
  Ensemble e;
  e.x.resize(n, d);
  switch (law.kind) {
    case InitialLaw::Kind::dirac: {
      const Eigen::VectorXd m = mean_or_zero(law.mean, d, "dirac law");
      e.x = m.transpose().replicate(n, 1);
      return e;
    }
    case InitialLaw::Kind::gaussian: {
      const Eigen::VectorXd m = mean_or_zero(law.mean, d, "gaussian law");
      const Eigen::MatrixXd L = chol_or_throw(law.cov, d, "gaussian law");
      ns.fill_normals(0, init_ch, e.x);
      e.x = (e.x * L.transpose()).rowwise() + m.transpose();
      return e;
    }
    case InitialLaw::Kind::two_point_mixture: {
      if (law.point_a.size() != d || law.point_b.size() != d)
        throw std::invalid_argument("two-point law: support dimension");
      if (!(law.weight_a >= 0 && law.weight_a <= 1))
        throw std::invalid_argument("two-point law: weight in [0, 1]");
      for (int i = 0; i < n; ++i) {
        const double u = ns.uniform(0, init_ch, std::uint64_t(i));
        e.x.row(i) =
            (u < law.weight_a ? law.point_a : law.point_b).transpose();
      }
      return e;
    }
    case InitialLaw::Kind::gaussian_random_center: {
      const Eigen::VectorXd m = mean_or_zero(law.mean, d, "random-center law");
      const Eigen::MatrixXd Lc =
          chol_or_throw(law.center_cov, d, "random-center law (center)");
      const Eigen::MatrixXd L = chol_or_throw(law.cov, d, "random-center law");
      Eigen::VectorXd zc(d);
      for (int c = 0; c < d; ++c)
        zc[c] = ns.normal(0, center_ch, std::uint64_t(c));
      const Eigen::VectorXd center = m + Lc * zc;
      ns.fill_normals(0, init_ch, e.x);
      e.x = (e.x * L.transpose()).rowwise() + center.transpose();
      return e;
    }
  }
  throw std::invalid_argument("sample_initial: unknown law");
}

void optimal_initial_pairing(const Ensemble& a, Ensemble& b) {
  if (a.x.rows() != b.x.rows() || a.x.cols() != b.x.cols())
    throw std::invalid_argument("pairing: ensembles must share shape");
  const int n = int(a.x.rows()), d = int(a.x.cols());
  std::vector<int> perm(n);
  if (d == 1) {
    // Monotone coupling: i-th smallest of a gets i-th smallest of b.
    std::vector<int> ia(n), ib(n);
    for (int i = 0; i < n; ++i) ia[i] = ib[i] = i;
    std::stable_sort(ia.begin(), ia.end(),
                     [&](int i, int j) { return a.x(i, 0) < a.x(j, 0); });
    std::stable_sort(ib.begin(), ib.end(),
                     [&](int i, int j) { return b.x(i, 0) < b.x(j, 0); });
    for (int k = 0; k < n; ++k) perm[ia[k]] = ib[k];
  } else {
    if (n > 512)
      throw std::invalid_argument("pairing: exact assignment capped at N = 512");
    perm = solve_assignment(n, [&](int i, int j) {
      return (a.x.row(i) - b.x.row(j)).squaredNorm();
    });
  }
  Eigen::MatrixXd nb(n, d);
  for (int i = 0; i < n; ++i) nb.row(i) = b.x.row(perm[i]);
  b.x = std::move(nb);
}

}  // namespace mkvcn
