#include "lotion/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lattice.hpp"

namespace lotion {
namespace {

using detail::block_lattice;
using detail::BlockLattice;
using detail::CoordinatePosition;

QuantView build_view(const Tensor& w, const QuantFormat& fmt, std::span<const double> scales, bool frozen) {
  QuantView view;
  view.blocks = partition(w, fmt);
  if (scales.size() != view.blocks.size()) {
    throw std::invalid_argument("quant_view: expected " + std::to_string(view.blocks.size()) +
                                " block scales, got " + std::to_string(scales.size()));
  }
  view.scales.assign(scales.begin(), scales.end());
  const std::size_t n = w.size();
  view.block_of.resize(n);
  view.lo.resize(n);
  view.hi.resize(n);
  view.delta.resize(n);
  view.up_gap.resize(n);
  view.at_extreme.resize(n);

  for (std::size_t b = 0; b < view.blocks.size(); ++b) {
    const Block blk = view.blocks[b];
    const BlockLattice lattice = block_lattice(w, blk, view.scales[b], fmt, frozen);
    for (std::size_t i = blk.begin; i < blk.end; ++i) {
      const CoordinatePosition p = lattice.locate(w[i]);
      view.block_of[i] = b;
      view.lo[i] = p.lo;
      view.hi[i] = p.hi;
      view.delta[i] = p.delta;
      view.up_gap[i] = p.up_gap;
      view.at_extreme[i] = p.at_extreme;
    }
  }
  return view;
}

double rtn_pick(double lo, double hi, double delta) noexcept {
  if (lo == hi || delta < 0.5) return lo;
  if (delta > 0.5) return hi;
  return std::abs(hi) > std::abs(lo) ? hi : lo;
}

}  // namespace

QuantFormat QuantFormat::uniform_int(int bits, std::size_t block_size) {
  if (bits < 2 || bits > 24) throw std::invalid_argument("uniform_int: bits must be in [2, 24]");
  QuantFormat f;
  f.bits_ = bits;
  f.block_size_ = block_size;
  const int top = (1 << (bits - 1)) - 1;
  f.levels_.reserve(2 * top + 1);
  for (int z = -top; z <= top; ++z) f.levels_.push_back(z);
  f.label_ = "int" + std::to_string(bits);
  return f;
}

QuantFormat QuantFormat::codebook(std::vector<double> levels, std::size_t block_size) {
  if (levels.size() < 3) throw std::invalid_argument("codebook: need at least 3 levels");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (!(levels[i] > levels[i - 1])) throw std::invalid_argument("codebook: levels must be strictly increasing");
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] != -levels[levels.size() - 1 - i]) {
      throw std::invalid_argument("codebook: levels must be symmetric about 0");
    }
  }
  if (!std::binary_search(levels.begin(), levels.end(), 0.0)) {
    throw std::invalid_argument("codebook: levels must contain 0");
  }
  QuantFormat f;
  f.levels_ = std::move(levels);
  f.block_size_ = block_size;
  f.label_ = "codebook";
  return f;
}

QuantFormat QuantFormat::fp4_e2m1(std::size_t block_size) {
  QuantFormat f = codebook({-6, -4, -3, -2, -1.5, -1, -0.5, 0, 0.5, 1, 1.5, 2, 3, 4, 6}, block_size);
  f.label_ = "fp4";
  return f;
}

QuantFormat QuantFormat::parse(const std::string& name) {
  std::string base = name;
  std::size_t block = kWholeTensor;
  if (auto slash = name.find('/'); slash != std::string::npos) {
    base = name.substr(0, slash);
    const std::string suffix = name.substr(slash + 1);
    if (suffix.size() < 2 || suffix[0] != 'b' ||
        !std::all_of(suffix.begin() + 1, suffix.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw std::invalid_argument("format '" + name + "': block suffix must look like /b<size>");
    }
    block = std::stoul(suffix.substr(1));
    if (block == 0) throw std::invalid_argument("format '" + name + "': block size must be positive");
  }
  if (base == "fp4") return fp4_e2m1(block);
  if (base.rfind("int", 0) == 0 && base.size() > 3 &&
      std::all_of(base.begin() + 3, base.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return uniform_int(std::stoi(base.substr(3)), block);
  }
  throw std::invalid_argument("unknown format '" + name + "' (expected intN, fp4, optionally /b<size>)");
}

std::string QuantFormat::name() const {
  std::string s = label_;
  if (block_size_ != kWholeTensor) s += "/b" + std::to_string(block_size_);
  return s;
}

std::vector<Block> partition(std::size_t n, const QuantFormat& fmt) {
  if (n == 0) throw std::invalid_argument("partition: empty tensor");
  const std::size_t bs = fmt.block_size() == kWholeTensor ? n : fmt.block_size();
  if (n % bs != 0) {
    throw std::invalid_argument("partition: block size " + std::to_string(bs) + " does not divide length " +
                                std::to_string(n));
  }
  std::vector<Block> blocks;
  blocks.reserve(n / bs);
  for (std::size_t b = 0; b < n; b += bs) blocks.push_back({b, b + bs});
  return blocks;
}

std::vector<Block> partition(const Tensor& w, const QuantFormat& fmt) { return partition(w.size(), fmt); }

double compute_scale(std::span<const double> block, const QuantFormat& fmt) {
  if (block.empty()) throw std::invalid_argument("compute_scale: empty block");
  return max_abs(block) / fmt.max_level();
}

QuantView quant_view(const Tensor& w, const QuantFormat& fmt) {
  const auto blocks = partition(w, fmt);
  std::vector<double> scales;
  scales.reserve(blocks.size());
  for (const auto& b : blocks) scales.push_back(compute_scale(w.values().subspan(b.begin, b.size()), fmt));
  return build_view(w, fmt, scales, false);
}

QuantView quant_view(const Tensor& w, const QuantFormat& fmt, std::span<const double> frozen_scales) {
  return build_view(w, fmt, frozen_scales, true);
}

Tensor cast_rtn(const Tensor& w, const QuantView& view) {
  if (view.size() != w.size()) throw ShapeError("cast_rtn: view does not match tensor " + to_string(w.shape()));
  Tensor out = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out[i] = rtn_pick(view.lo[i], view.hi[i], view.delta[i]);
  }
  return out;
}

Tensor cast_rtn(const Tensor& w, const QuantFormat& fmt) {
  Tensor out = w;
  detail::for_each_position(w, fmt, [&](std::size_t i, std::size_t, double, const CoordinatePosition& p) {
    out[i] = rtn_pick(p.lo, p.hi, p.delta);
  });
  return out;
}

}  // namespace lotion
