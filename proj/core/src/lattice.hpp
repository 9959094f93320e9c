#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "lotion/quant.hpp"
#include "lotion/tensor.hpp"

namespace lotion::detail {

struct CoordinatePosition {
  double lo = 0.0;
  double hi = 0.0;
  double delta = 0.0;
  double up_gap = 0.0;
  bool at_extreme = false;
};

/// Lattice of one block: levels z·s, with the top level pinned to `top`
/// (max|w| for a live scale, s·L for a frozen one).
class BlockLattice {
 public:
  BlockLattice(const QuantFormat& fmt, double scale, double top)
      : levels_(fmt.levels()),
        uniform_(fmt.is_uniform()),
        s_(scale),
        inv_s_(scale == 0.0 ? 0.0 : 1.0 / scale),
        top_(top),
        L_(fmt.max_level()) {}

  double scale() const noexcept { return s_; }

  /// Representable coordinates come back with lo == hi == w.
  CoordinatePosition locate(double w) const noexcept {
    CoordinatePosition p;
    if (s_ == 0.0) return p;
    const double x = w * inv_s_;
    if (std::abs(w) >= top_ || std::abs(std::abs(x) - L_) <= kLatticeTolerance) {
      const double v = std::copysign(top_, w);
      p.lo = p.hi = v;
      p.at_extreme = true;
      if (w < 0.0) p.up_gap = value(1) - v;
      return p;
    }
    std::size_t k;  // index of the level at or below x, up to rounding absorbed by the snap below
    if (uniform_) {
      k = static_cast<std::size_t>(x + L_);
    } else {
      k = static_cast<std::size_t>(std::upper_bound(levels_.begin(), levels_.end(), x) - levels_.begin()) - 1;
    }
    k = std::min(k, levels_.size() - 2);
    if (x - levels_[k] <= kLatticeTolerance) {
      p.lo = p.hi = w;
      p.up_gap = value(k + 1) - value(k);
      return p;
    }
    if (levels_[k + 1] - x <= kLatticeTolerance) {
      p.lo = p.hi = w;
      p.up_gap = value(k + 2) - value(k + 1);
      return p;
    }
    p.lo = value(k);
    p.hi = value(k + 1);
    p.delta = (w - p.lo) / (p.hi - p.lo);
    p.up_gap = p.hi - p.lo;
    return p;
  }

 private:
  double value(std::size_t k) const noexcept {
    if (k == 0) return -top_;
    if (k + 1 >= levels_.size()) return top_;
    return levels_[k] * s_;
  }

  std::span<const double> levels_;
  bool uniform_;
  double s_;
  double inv_s_;
  double top_;
  double L_;
};

inline BlockLattice block_lattice(const Tensor& w, Block blk, double scale, const QuantFormat& fmt, bool frozen) {
  const double top = frozen ? scale * fmt.max_level() : max_abs(w.values().subspan(blk.begin, blk.size()));
  return BlockLattice(fmt, scale, top);
}

/// Visit every coordinate with its live-scale lattice position:
/// fn(i, block, scale, position). Allocation free.
template <class Fn>
void for_each_position(const Tensor& w, const QuantFormat& fmt, Fn&& fn) {
  const std::size_t n = w.size();
  const std::size_t bs = fmt.block_size() == kWholeTensor ? n : fmt.block_size();
  if (n == 0 || n % bs != 0) partition(n, fmt);  // throws with the canonical message
  const auto values = w.values();
  for (std::size_t b = 0, begin = 0; begin < n; ++b, begin += bs) {
    const double top = max_abs(values.subspan(begin, bs));
    const BlockLattice lattice(fmt, top / fmt.max_level(), top);
    for (std::size_t i = begin; i < begin + bs; ++i) fn(i, b, lattice.scale(), lattice.locate(values[i]));
  }
}

}  // namespace lotion::detail
