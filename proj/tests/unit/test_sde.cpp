#include "doctest.h"

#include "mkvcn/model.hpp"
#include "mkvcn/ot.hpp"
#include "mkvcn/rng.hpp"
#include "mkvcn/sde.hpp"

#include <cmath>
#include <vector>

using namespace mkvcn;

namespace {

PotentialSpec zero_potential(int d) {
  PotentialSpec v;
  v.kind = PotentialKind::custom_polynomial;
  v.dim = d;
  v.value = [](const Eigen::VectorXd&) { return 0.0; };
  v.grad = [d](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(d); };
  v.kappa = [](double) { return 0.0; };
  v.kappa_liminf = 0.0;
  v.lipschitz = 0.0;
  return v;
}

CoupledEnsembles two_gaussian_ensembles(const NoisePlan& plan, int n,
                                        double gap, CouplingMode::Kind kind,
                                        double delta = 1e-3) {
  InitialLaw la;
  la.mean = Eigen::VectorXd::Constant(1, -gap / 2);
  la.cov = Eigen::MatrixXd::Constant(1, 1, 0.25);
  InitialLaw lb = la;
  lb.mean = Eigen::VectorXd::Constant(1, gap / 2);
  CoupledEnsembles ce;
  ce.mode.kind = kind;
  ce.mode.delta = delta;
  ce.realization = 0;
  ce.a = sample_initial(la, n, 1, plan, 0, Channel::init_a,
                        Channel::init_center_shared);
  ce.b = sample_initial(lb, n, 1, plan, 0, Channel::init_b,
                        Channel::init_center_shared);
  return ce;
}

}  // namespace

TEST_CASE("empirical mean moves by exactly the common increment") {
  // V = 0, quadratic interaction (mean preserving), sigma = 0: the ensemble
  // mean is driven by the common channel alone, reconstructable from the
  // stream addresses.
  const NoisePlan plan{555, 1e-3, 0.0, 1.3};
  const PotentialSpec v = zero_potential(2);
  const InteractionSpec w = make_quadratic_interaction(2.0);
  InitialLaw law;
  law.mean = Eigen::VectorXd::Zero(2);
  law.cov = Eigen::MatrixXd::Identity(2, 2);
  CoupledEnsembles ce;
  ce.mode.kind = CouplingMode::Kind::synchronous;
  ce.realization = 4;
  ce.a = sample_initial(law, 32, 2, plan, 4, Channel::init_a,
                        Channel::init_center_shared);

  const NoiseStream ns(plan.seed, 4);
  for (int k = 0; k < 5; ++k) {
    const Eigen::RowVectorXd before = ce.a.x.colwise().mean();
    step(ce, v, w, plan);
    const Eigen::RowVectorXd after = ce.a.x.colwise().mean();
    for (int c = 0; c < 2; ++c) {
      const double z = ns.normal(std::uint64_t(k), Channel::common,
                                 std::uint64_t(c));
      CHECK(after[c] - before[c] ==
            doctest::Approx(plan.sigma0 * std::sqrt(plan.dt) * z)
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("reflection ramp and mixing weights") {
  CHECK(reflection_ramp(0.0) == 0.0);
  CHECK(reflection_ramp(0.5) == 0.0);
  CHECK(reflection_ramp(0.75) == doctest::Approx(0.5));
  CHECK(reflection_ramp(1.0) == 1.0);
  CHECK(reflection_ramp(9.0) == 1.0);
  for (double u : {0.55, 0.7, 0.9, 1.0}) {
    const double pi = reflection_ramp(u);
    const double lam = std::sqrt(1.0 - pi * pi);
    CHECK(pi * pi + lam * lam == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("reflection coupling flips the common kick when far apart") {
  // V = 0, W = 0, sigma = 0, distance >> delta so pi = 1: the mean gap
  // widens by exactly twice the common increment.
  const NoisePlan plan{808, 1e-3, 0.0, 1.0};
  const PotentialSpec v = zero_potential(1);
  const InteractionSpec w = make_no_interaction();
  CoupledEnsembles ce = two_gaussian_ensembles(
      plan, 16, 6.0, CouplingMode::Kind::reflection_1d, 1e-3);
  const NoiseStream ns(plan.seed, 0);
  const double gap0 = ce.a.x.mean() - ce.b->x.mean();
  step(ce, v, w, plan);
  const double gap1 = ce.a.x.mean() - ce.b->x.mean();
  const double eta = ns.normal(0, Channel::common, 0);
  CHECK(gap1 - gap0 ==
        doctest::Approx(2.0 * std::sqrt(plan.dt) * eta).epsilon(1e-12));
}

TEST_CASE("synchronous coupling keeps identical ensembles identical") {
  const NoisePlan plan{321, 1e-3, 0.5, 0.5};
  const PotentialSpec v = make_quadratic(1, 1.0);
  const InteractionSpec w = make_quadratic_interaction(0.5);
  InitialLaw law;
  law.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
  CoupledEnsembles ce;
  ce.mode.kind = CouplingMode::Kind::synchronous;
  ce.a = sample_initial(law, 24, 1, plan, 0, Channel::init_a,
                        Channel::init_center_shared);
  ce.b = ce.a;  // same start, shared draws
  for (int k = 0; k < 50; ++k) step(ce, v, w, plan);
  CHECK((ce.a.x - ce.b->x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("independent coupling uses separate channels") {
  const NoisePlan plan{321, 1e-3, 0.5, 0.5};
  const PotentialSpec v = make_quadratic(1, 1.0);
  const InteractionSpec w = make_no_interaction();
  InitialLaw law;
  law.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
  CoupledEnsembles ce;
  ce.mode.kind = CouplingMode::Kind::independent;
  ce.a = sample_initial(law, 24, 1, plan, 0, Channel::init_a,
                        Channel::init_center_shared);
  ce.b = ce.a;
  step(ce, v, w, plan);
  // Different idiosyncratic and common draws: the copies separate at once.
  CHECK((ce.a.x - ce.b->x).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("stepping is bitwise reproducible") {
  const NoisePlan plan{777, 2e-3, 0.4, 0.6};
  const PotentialSpec v = builtin_double_well_1d();
  const InteractionSpec w = make_quadratic_interaction(0.1);
  auto make = [&] {
    InitialLaw law;
    law.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
    CoupledEnsembles ce;
    ce.mode.kind = CouplingMode::Kind::synchronous;
    ce.realization = 2;
    ce.a = sample_initial(law, 16, 1, plan, 2, Channel::init_a,
                          Channel::init_center_shared);
    return ce;
  };
  CoupledEnsembles c1 = make(), c2 = make();
  for (int k = 0; k < 200; ++k) {
    step(c1, v, w, plan);
    step(c2, v, w, plan);
  }
  CHECK((c1.a.x - c2.a.x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("segmented runs stitch to the unsegmented path") {
  const NoisePlan plan{91, 1e-3, 0.3, 0.7};
  const PotentialSpec v = make_quadratic(1, 1.0);
  const InteractionSpec w = make_quadratic_interaction(0.5);
  auto make = [&] {
    InitialLaw law;
    law.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
    CoupledEnsembles ce;
    ce.mode.kind = CouplingMode::Kind::synchronous;
    ce.a = sample_initial(law, 8, 1, plan, 0, Channel::init_a,
                          Channel::init_center_shared);
    return ce;
  };
  const std::vector<Observer> obs = {
      {"m2", [](const CoupledEnsembles& s, double) {
         return s.a.x.rowwise().squaredNorm().mean();
       }}};
  CoupledEnsembles whole = make(), parts = make();
  const TrajectoryRecord rw = run(whole, v, w, plan, 0.1, 10, obs);
  const TrajectoryRecord r1 = run(parts, v, w, plan, 0.04, 10, obs);
  const TrajectoryRecord r2 = run(parts, v, w, plan, 0.06, 10, obs);
  CHECK((whole.a.x - parts.a.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(rw.observed == 11);
  CHECK(r1.observed == 5);
  CHECK(r2.observed == 7);
  // Continuation times pick up where the first segment stopped.
  CHECK(r2.times[0] == doctest::Approx(0.04));
  CHECK(r1.columns(4, 0) == r2.columns(0, 0));  // same state observed twice
  CHECK(rw.columns(10, 0) == r2.columns(6, 0));
}

TEST_CASE("run validates cadence") {
  const NoisePlan plan{91, 1e-3, 0.3, 0.7};
  const PotentialSpec v = make_quadratic(1, 1.0);
  const InteractionSpec w = make_no_interaction();
  InitialLaw law;
  CoupledEnsembles ce;
  ce.a = sample_initial(law, 4, 1, plan, 0, Channel::init_a,
                        Channel::init_center_shared);
  const std::vector<Observer> obs;
  CHECK_THROWS(run(ce, v, w, plan, 0.0105, 10, obs));  // not a step multiple
  CHECK_THROWS(run(ce, v, w, plan, 0.05, 7, obs));     // cadence mismatch
}

TEST_CASE("blow-up carries the partial record") {
  NoisePlan plan{5, 1e-3, 0.0, 0.0};
  PotentialSpec v = zero_potential(1);
  // Outward drift: grad V = -1e4 x means drift +1e4 x and doubling per step.
  v.grad = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(-1e4 * x); };
  const InteractionSpec w = make_no_interaction();
  InitialLaw law;
  law.mean = Eigen::VectorXd::Constant(1, 1.0);
  law.kind = InitialLaw::Kind::dirac;
  CoupledEnsembles ce;
  ce.a = sample_initial(law, 4, 1, plan, 0, Channel::init_a,
                        Channel::init_center_shared);
  const std::vector<Observer> obs = {
      {"m2", [](const CoupledEnsembles& s, double) {
         return s.a.x.rowwise().squaredNorm().mean();
       }}};
  bool thrown = false;
  try {
    run(ce, v, w, plan, 1.0, 1, obs);
  } catch (const BlowUpError& e) {
    thrown = true;
    CHECK(e.particle >= 0);
    CHECK(e.time > 0);
    CHECK(e.partial.blew_up);
    CHECK(e.partial.observed >= 1);
    CHECK(e.partial.observed < 1001);
  }
  CHECK(thrown);
}

TEST_CASE("box excursions are counted") {
  const NoisePlan plan{5, 1e-3, 0.0, 0.0};
  PotentialSpec v = make_quadratic(1, 1.0);
  v.box_halfwidth = 0.5;
  const InteractionSpec w = make_no_interaction();
  InitialLaw law;
  law.mean = Eigen::VectorXd::Constant(1, 2.0);  // outside the box
  law.kind = InitialLaw::Kind::dirac;
  CoupledEnsembles ce;
  ce.a = sample_initial(law, 4, 1, plan, 0, Channel::init_a,
                        Channel::init_center_shared);
  const std::vector<Observer> obs;
  run(ce, v, w, plan, 0.01, 10, obs);
  CHECK(ce.box_excursions > 0);
  CHECK(ce.max_abs_coord >= 1.0);
}

TEST_CASE("initial samplers") {
  const NoisePlan plan{1010, 1e-3, 0.5, 0.5};

  SUBCASE("dirac") {
    InitialLaw law;
    law.kind = InitialLaw::Kind::dirac;
    law.mean = Eigen::VectorXd::Constant(2, 1.5);
    const Ensemble e = sample_initial(law, 10, 2, plan, 0, Channel::init_a,
                                      Channel::init_center_shared);
    CHECK((e.x.array() - 1.5).abs().maxCoeff() == 0.0);
  }

  SUBCASE("gaussian moments") {
    InitialLaw law;
    law.mean = Eigen::VectorXd::Constant(1, 2.0);
    law.cov = Eigen::MatrixXd::Constant(1, 1, 4.0);
    const Ensemble e = sample_initial(law, 40000, 1, plan, 0, Channel::init_a,
                                      Channel::init_center_shared);
    CHECK(e.x.col(0).mean() == doctest::Approx(2.0).epsilon(0.02));
    const double var =
        (e.x.col(0).array() - e.x.col(0).mean()).square().mean();
    CHECK(var == doctest::Approx(4.0).epsilon(0.05));
  }

  SUBCASE("two point mixture extremes") {
    InitialLaw law;
    law.kind = InitialLaw::Kind::two_point_mixture;
    law.point_a = Eigen::VectorXd::Constant(1, -3.0);
    law.point_b = Eigen::VectorXd::Constant(1, 3.0);
    law.weight_a = 1.0;
    const Ensemble all_a = sample_initial(law, 50, 1, plan, 0, Channel::init_a,
                                          Channel::init_center_shared);
    CHECK((all_a.x.array() + 3.0).abs().maxCoeff() == 0.0);
    law.weight_a = 0.5;
    const Ensemble mix = sample_initial(law, 4000, 1, plan, 0, Channel::init_a,
                                        Channel::init_center_shared);
    const double frac =
        (mix.x.array() < 0).cast<double>().mean();
    CHECK(frac == doctest::Approx(0.5).epsilon(0.1));
  }

  SUBCASE("random center sharing") {
    InitialLaw law;
    law.kind = InitialLaw::Kind::gaussian_random_center;
    law.cov = Eigen::MatrixXd::Constant(1, 1, 1e-12);
    law.center_cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
    const Ensemble ea = sample_initial(law, 8, 1, plan, 3, Channel::init_a,
                                       Channel::init_center_shared);
    const Ensemble eb = sample_initial(law, 8, 1, plan, 3, Channel::init_b,
                                       Channel::init_center_shared);
    // Same center channel, negligible within-noise: nearly equal centers.
    CHECK(std::abs(ea.x.mean() - eb.x.mean()) < 1e-5);
    const Ensemble ec = sample_initial(law, 8, 1, plan, 3, Channel::init_b,
                                       Channel::init_center_b);
    CHECK(std::abs(ea.x.mean() - ec.x.mean()) > 1e-5);
  }
}

TEST_CASE("initial pairing minimizes the paired distance") {
  const NoisePlan plan{77, 1e-3, 0.5, 0.5};
  InitialLaw law;
  law.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
  Ensemble a = sample_initial(law, 64, 1, plan, 0, Channel::init_a,
                              Channel::init_center_shared);
  Ensemble b = sample_initial(law, 64, 1, plan, 0, Channel::init_b,
                              Channel::init_center_shared);
  optimal_initial_pairing(a, b);
  const double rms = std::sqrt((a.x - b.x).rowwise().squaredNorm().mean());
  CHECK(rms == doctest::Approx(w_p_1d(a.x.col(0), b.x.col(0), 2.0))
                   .epsilon(1e-12));
}
