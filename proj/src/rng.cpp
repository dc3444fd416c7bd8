#include "mkvcn/rng.hpp"

#include <cmath>
#include <numbers>

namespace mkvcn {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t p = std::uint64_t(a) * std::uint64_t(b);
  hi = std::uint32_t(p >> 32);
  lo = std::uint32_t(p);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Two 32-bit words -> uniform double strictly inside (0,1), 53-bit grid.
inline double unit_double(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t v = (std::uint64_t(a) << 32) | std::uint64_t(b);
  return (double(v >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

NoiseStream::NoiseStream(std::uint64_t seed, std::uint32_t realization) {
  const std::uint64_t k =
      splitmix64(seed + 0x9E3779B97F4A7C15ull * (std::uint64_t(realization) + 1));
  key_ = {std::uint32_t(k), std::uint32_t(k >> 32)};
}

std::array<std::uint32_t, 4> NoiseStream::block_words(std::uint64_t step,
                                                      Channel ch,
                                                      std::uint64_t block) const {
  // step < 2^40 and channel < 2^24 keep the packing collision-free.
  const std::array<std::uint32_t, 4> ctr = {
      std::uint32_t(step),
      std::uint32_t(step >> 32) | (std::uint32_t(ch) << 8),
      std::uint32_t(block),
      std::uint32_t(block >> 32)};
  return philox4x32(ctr, key_);
}

std::array<double, 2> NoiseStream::normal_pair(std::uint64_t step, Channel ch,
                                               std::uint64_t block) const {
  const auto w = block_words(step, ch, block);
  const double u1 = unit_double(w[0], w[1]);
  const double u2 = unit_double(w[2], w[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double th = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(th), r * std::sin(th)};
}

double NoiseStream::normal(std::uint64_t step, Channel ch,
                           std::uint64_t flat) const {
  return normal_pair(step, ch, flat >> 1)[flat & 1];
}

double NoiseStream::uniform(std::uint64_t step, Channel ch,
                            std::uint64_t flat) const {
  const auto w = block_words(step, ch, flat >> 1);
  return (flat & 1) ? unit_double(w[2], w[3]) : unit_double(w[0], w[1]);
}

void NoiseStream::fill_normals(std::uint64_t step, Channel ch,
                               Eigen::Ref<Eigen::MatrixXd> out) const {
  const Eigen::Index n = out.rows(), d = out.cols();
  std::uint64_t flat = 0;
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index c = 0; c < d; ++c, ++flat) {
      if ((flat & 1) == 0 && c + 1 < d) {
        const auto z = normal_pair(step, ch, flat >> 1);
        out(p, c) = z[0];
        out(p, c + 1) = z[1];
        ++c;
        ++flat;
      } else {
        out(p, c) = normal(step, ch, flat);
      }
    }
  }
}

}  // namespace mkvcn
