#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lotion/tensor.hpp"

namespace lotion {

/// Block size sentinel meaning one shared scale for the whole tensor.
inline constexpr std::size_t kWholeTensor = 0;

/// Scaled coordinates within this distance of a level are treated as sitting
/// on it. Absorbs the few-ulp error of w / (max|w| / L).
inline constexpr double kLatticeTolerance = 1e-9;

/// A symmetric number format plus its block-partition policy.
///
/// Uniform INT-n is the codebook {-(2^(n-1)-1), ..., 2^(n-1)-1}. Explicit
/// codebooks must be strictly increasing, symmetric about zero and contain
/// zero. Either way the block scale maps max|w| onto the largest level.
class QuantFormat {
 public:
  static QuantFormat uniform_int(int bits, std::size_t block_size = kWholeTensor);
  static QuantFormat codebook(std::vector<double> levels, std::size_t block_size = kWholeTensor);
  /// E2M1 levels {0, ±0.5, ±1, ±1.5, ±2, ±3, ±4, ±6}.
  static QuantFormat fp4_e2m1(std::size_t block_size = kWholeTensor);

  /// Parse "int4", "int8", "fp4", optionally suffixed by "/b<block>".
  static QuantFormat parse(const std::string& name);

  bool is_uniform() const noexcept { return bits_ > 0; }
  int bits() const noexcept { return bits_; }
  std::span<const double> levels() const noexcept { return levels_; }
  double max_level() const noexcept { return levels_.back(); }
  std::size_t block_size() const noexcept { return block_size_; }

  /// Canonical name, e.g. "int4", "fp4/b32", or "codebook[...]" for custom sets.
  std::string name() const;

  bool operator==(const QuantFormat&) const = default;

 private:
  QuantFormat() = default;

  int bits_ = 0;  // 0 for explicit codebooks
  std::vector<double> levels_;
  std::size_t block_size_ = kWholeTensor;
  std::string label_;
};

/// Half-open coordinate range [begin, end).
struct Block {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const Block&) const = default;
};

/// Contiguous disjoint blocks covering [0, n). Throws std::invalid_argument if
/// the block size does not divide n.
std::vector<Block> partition(std::size_t n, const QuantFormat& fmt);
std::vector<Block> partition(const Tensor& w, const QuantFormat& fmt);

/// max|w_i| / max level; 0 for an all-zero block.
double compute_scale(std::span<const double> block, const QuantFormat& fmt);

/// Per-coordinate position of w on its block's lattice.
///
/// lo/hi are the adjacent representable values around w_i and delta is the
/// fractional position (w_i - lo_i) / (hi_i - lo_i). Representable
/// coordinates have lo == hi == w_i and delta == 0. `up_gap` is the distance
/// from lo_i to the next level above it (0 at the top of the range or for a
/// zero block); it supplies the right-sided derivative on the lattice.
struct QuantView {
  std::vector<Block> blocks;
  std::vector<double> scales;     // one per block
  std::vector<std::size_t> block_of;
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<double> delta;
  std::vector<double> up_gap;
  std::vector<bool> at_extreme;   // sits on ±max level (incl. clipped)

  std::size_t size() const noexcept { return lo.size(); }
  bool representable(std::size_t i) const noexcept { return lo[i] == hi[i]; }
};

QuantView quant_view(const Tensor& w, const QuantFormat& fmt);

/// Same, with block scales supplied by the caller (scale held fixed).
/// Coordinates beyond the range of a frozen scale clip to the extreme level.
QuantView quant_view(const Tensor& w, const QuantFormat& fmt, std::span<const double> frozen_scales);

/// Deterministic round-to-nearest cast; ties round away from zero.
Tensor cast_rtn(const Tensor& w, const QuantFormat& fmt);
Tensor cast_rtn(const Tensor& w, const QuantView& view);

}  // namespace lotion
