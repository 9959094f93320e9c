#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "lotion/tensor.hpp"

namespace lotion {

/// Philox-4x32-10 block function (Salmon et al., SC'11). Pure.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// Counter-based random stream keyed by (seed, stream id).
///
/// The seed is the Philox key and the stream id occupies the upper half of the
/// counter, so two streams with the same seed but different ids never overlap.
/// Draws depend only on (seed, stream id, position), never on the platform or
/// on how many other streams exist. A stream is owned by one worker.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept : seed_(seed), stream_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }
  std::uint64_t position() const noexcept { return position_; }

  /// Next raw 64-bit word.
  std::uint64_t next_u64() noexcept;
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() noexcept;
  /// Standard normal via Box-Muller (consumes two uniforms).
  double normal() noexcept;

  /// Derive an independent stream sharing this seed.
  RngStream fork(std::uint64_t stream_id) const noexcept { return RngStream(seed_, stream_id); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t position_ = 0;  // in 64-bit words
  std::array<std::uint32_t, 4> block_{};
  bool have_block_ = false;
};

/// n i.i.d. draws in [0, 1) as a 1-D tensor.
Tensor uniform01(RngStream& rng, std::size_t n);

/// n i.i.d. standard normal draws as a 1-D tensor.
Tensor normal(RngStream& rng, std::size_t n);

}  // namespace lotion
