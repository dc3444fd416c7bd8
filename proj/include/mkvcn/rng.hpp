#pragma once
// Counter-based Gaussian noise. Every increment is addressed by
// (seed, realization, step, channel, flat component index) and regenerated
// on demand, so a draw never depends on how many draws happened before it:
// runs are bitwise reproducible for any worker count or observer layout.
//
// flat index convention: L = particle * dim + component (particle-major).
// Channels that are not per-particle (the common drivers) use particle 0.

#include <Eigen/Dense>

#include <array>
#include <cstdint>

namespace mkvcn {

// philox4x32-10 block function (Salmon et al. reference constants).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key);

enum class Channel : std::uint32_t {
  idio_a = 0,        // idiosyncratic driver of ensemble a (shared with b unless independent)
  idio_b = 1,        // ensemble b's own idiosyncratic driver (independent mode only)
  idio_aux = 2,      // auxiliary mean-field-proxy ensemble
  common = 3,        // common driver
  common_b = 4,      // ensemble b's own common driver (independent mode only)
  common_aux = 5,    // auxiliary common driver used by the reflection mixing
  init_a = 6,        // initial-condition draws, ensemble a
  init_b = 7,
  init_aux = 8,
  init_center_shared = 9,   // random-center draw shared by both ensembles
  init_center_a = 10,       // per-ensemble random-center draws
  init_center_b = 11,
};

class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::uint32_t realization);

  // Standard normal at a fixed address. step must stay below 2^40.
  double normal(std::uint64_t step, Channel ch, std::uint64_t flat) const;
  // Uniform in (0,1) at a fixed address. Shares the underlying block with
  // normal() at the same address, so a channel should use one or the other.
  double uniform(std::uint64_t step, Channel ch, std::uint64_t flat) const;

  // Fill out(p, c) with the normal at flat index p*cols+c. Matches normal()
  // exactly and computes each philox block once.
  void fill_normals(std::uint64_t step, Channel ch,
                    Eigen::Ref<Eigen::MatrixXd> out) const;

 private:
  std::array<double, 2> normal_pair(std::uint64_t step, Channel ch,
                                    std::uint64_t block) const;
  std::array<std::uint32_t, 4> block_words(std::uint64_t step, Channel ch,
                                           std::uint64_t block) const;
  std::array<std::uint32_t, 2> key_;
};

}  // namespace mkvcn
