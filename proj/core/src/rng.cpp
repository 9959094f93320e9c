#include "lotion/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lotion {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kWeyl0;
    k[1] += kWeyl1;
  }
  return c;
}

std::uint64_t RngStream::next_u64() noexcept {
  // Each Philox block yields two words; block index = position / 2.
  if ((position_ & 1u) == 0 || !have_block_) {
    const std::uint64_t block = position_ >> 1;
    block_ = philox4x32({static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
                         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
                        {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
    have_block_ = true;
  }
  const std::size_t half = (position_ & 1u) * 2;
  ++position_;
  return (static_cast<std::uint64_t>(block_[half + 1]) << 32) | block_[half];
}

double RngStream::uniform01() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() noexcept {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor uniform01(RngStream& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform01: n must be >= 1");
  std::vector<double> out(n);
  for (auto& v : out) v = rng.uniform01();
  return Tensor::vector(std::move(out));
}

Tensor normal(RngStream& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("normal: n must be >= 1");
  std::vector<double> out(n);
  for (auto& v : out) v = rng.normal();
  return Tensor::vector(std::move(out));
}

}  // namespace lotion
