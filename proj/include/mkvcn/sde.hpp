#pragma once
// Coupled interacting-particle systems driven by idiosyncratic plus common
// Brownian increments, Euler-Maruyama with a fixed step. Each particle row
// follows
//   dX_i = -grad V(X_i) dt - (1/M) sum_j grad W(X_i - S_j) dt
//          + sigma dB_i + sigma0 dB0,
// where S is the ensemble's interaction source: itself, or the auxiliary
// mean-field-proxy ensemble when one is attached (ensemble a only).
//
// Coupling modes wire the increments of the two ensembles:
//   independent     fresh idiosyncratic and common draws for each ensemble
//   synchronous     identical idiosyncratic and common draws
//   reflection_1d   shared idiosyncratic draws; common increments mixed as
//                   a: sigma0 (pi dB0 + lambda dBt), b: sigma0 (-pi dB0 + lambda dBt)
//                   with pi = ramp(mean_i |a_i - b_i| / delta), pi^2 + lambda^2 = 1
//   mean_reflection shared idiosyncratic draws; b's common increment reflected
//                   across the empirical-mean difference direction:
//                   b: sigma0 (pi (I - 2 e e^T) dB0 + lambda dBt), e = Ebar/|Ebar|,
//                   pi = ramp(|Ebar| / delta)
// The auxiliary ensemble always receives ensemble a's effective common
// increment and its own idiosyncratic channel.

#include "mkvcn/model.hpp"
#include "mkvcn/rng.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mkvcn {

struct NoisePlan {
  std::uint64_t seed = 1;
  double dt = 1e-3;
  double sigma = 0.0;
  double sigma0 = 1.0;
};

struct Ensemble {
  Eigen::MatrixXd x;  // N x d, one particle per row
};

struct CouplingMode {
  enum class Kind { independent, synchronous, reflection_1d, mean_reflection };
  Kind kind = Kind::synchronous;
  double delta = 1e-3;  // reflection ramp scale
};

// Ramp pi(u) = clamp(2u - 1, 0, 1): off below u = 1/2, fully on above u = 1.
double reflection_ramp(double u);

struct CoupledEnsembles {
  Ensemble a;
  std::optional<Ensemble> b;
  std::optional<Ensemble> aux;  // mean-field proxy driving a's interaction
  CouplingMode mode;
  std::uint32_t realization = 0;
  std::uint64_t step_count = 0;
  // diagnostics accumulated by step()
  long box_excursions = 0;   // steps with some coordinate outside [-B, B]
  double max_abs_coord = 0;
};

struct BlowUpError;  // below (carries the partial record)

// One Euler-Maruyama step; throws BlowUpError when a coordinate leaves
// [-1e3, 1e3] or turns non-finite, naming the particle and time.
void step(CoupledEnsembles& ce, const PotentialSpec& v,
          const InteractionSpec& w, const NoisePlan& plan);

struct Observer {
  std::string name;
  std::function<double(const CoupledEnsembles&, double)> eval;  // (state, t)
};

struct TrajectoryRecord {
  Eigen::VectorXd times;
  std::vector<std::string> names;
  Eigen::MatrixXd columns;  // one row per observation time
  int observed = 0;         // rows actually filled (smaller after blow-up)
  bool blew_up = false;
  int blow_particle = -1;
  double blow_time = 0;
  long box_excursions = 0;
  double max_abs_coord = 0;
  std::vector<std::string> warnings;

  Eigen::VectorXd column(const std::string& name) const;  // filled rows only
};

struct BlowUpError : std::runtime_error {
  BlowUpError(const std::string& msg, int particle_, double time_)
      : std::runtime_error(msg), particle(particle_), time(time_) {}
  int particle;
  double time;
  TrajectoryRecord partial;  // attached by run()
};

// Advance the state in place by `duration`, observing every observe_every
// steps (which must divide the step count); the starting state is always
// recorded. Times continue from the state's step counter, so consecutive
// calls stitch seamlessly. Blow-ups propagate with the partial record
// attached.
TrajectoryRecord run(CoupledEnsembles& ce, const PotentialSpec& v,
                     const InteractionSpec& w, const NoisePlan& plan,
                     double duration, long observe_every,
                     std::span<const Observer> observers);

struct InitialLaw {
  enum class Kind { gaussian, two_point_mixture, dirac, gaussian_random_center };
  Kind kind = Kind::gaussian;
  Eigen::VectorXd mean;        // gaussian / dirac / random-center mean
  Eigen::MatrixXd cov;         // gaussian and random-center within-covariance
  Eigen::MatrixXd center_cov;  // random-center: covariance of the center draw
  Eigen::VectorXd point_a, point_b;  // two-point support
  double weight_a = 0.5;
  bool share_center = true;  // random-center: draw from the shared channel
};

// Sample N conditionally i.i.d. particles; draws are addressed on init_ch
// (and center_ch for the random-center kind), so the sample is a pure
// function of (plan.seed, realization).
Ensemble sample_initial(const InitialLaw& law, int n, int d,
                        const NoisePlan& plan, std::uint32_t realization,
                        Channel init_ch, Channel center_ch);

// Reorder b's rows to minimize the paired squared distance: monotone sort
// pairing in d = 1, exact assignment for d >= 2 with N <= 512.
void optimal_initial_pairing(const Ensemble& a, Ensemble& b);

}  // namespace mkvcn
