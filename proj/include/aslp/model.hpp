#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "aslp/errors.hpp"
#include "aslp/grid.hpp"
#include "aslp/random.hpp"

namespace aslp {

inline constexpr std::size_t kDefaultHidden = 8;
inline constexpr std::size_t kKernelTaps = 9;

/// Parameters (or gradients) of the two-layer 3x3 convolutional segmenter
/// with a 1x1 head, stored contiguously:
///   conv1_w [h][9], conv1_b [h], conv2_w [h][h][9], conv2_b [h], head_w [h], head_b [1].
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(std::size_t hidden) : hidden_(hidden), data_(count_for(hidden), 0.0) {
    if (hidden == 0) throw DomainError("segmenter needs at least one hidden channel");
  }

  static constexpr std::size_t count_for(std::size_t h) {
    return kKernelTaps * h + h + kKernelTaps * h * h + h + h + 1;
  }

  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  std::span<double> conv1_w() { return slice(0, kKernelTaps * hidden_); }
  std::span<double> conv1_b() { return slice(off_conv1_b(), hidden_); }
  std::span<double> conv2_w() { return slice(off_conv2_w(), kKernelTaps * hidden_ * hidden_); }
  std::span<double> conv2_b() { return slice(off_conv2_b(), hidden_); }
  std::span<double> head_w() { return slice(off_head_w(), hidden_); }
  double& head_b() { return data_[off_head_b()]; }

  std::span<const double> conv1_w() const { return slice(0, kKernelTaps * hidden_); }
  std::span<const double> conv1_b() const { return slice(off_conv1_b(), hidden_); }
  std::span<const double> conv2_w() const { return slice(off_conv2_w(), kKernelTaps * hidden_ * hidden_); }
  std::span<const double> conv2_b() const { return slice(off_conv2_b(), hidden_); }
  std::span<const double> head_w() const { return slice(off_head_w(), hidden_); }
  double head_b() const { return data_[off_head_b()]; }

  bool same_shape(const ParamSet& o) const noexcept { return hidden_ == o.hidden_ && data_.size() == o.data_.size(); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  /// FNV-1a over the raw bytes; detects a forward cache produced by other weights.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : data_) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::size_t off_conv1_b() const { return kKernelTaps * hidden_; }
  std::size_t off_conv2_w() const { return off_conv1_b() + hidden_; }
  std::size_t off_conv2_b() const { return off_conv2_w() + kKernelTaps * hidden_ * hidden_; }
  std::size_t off_head_w() const { return off_conv2_b() + hidden_; }
  std::size_t off_head_b() const { return off_head_w() + hidden_; }

  std::span<double> slice(std::size_t off, std::size_t n) { return std::span<double>(data_).subspan(off, n); }
  std::span<const double> slice(std::size_t off, std::size_t n) const {
    return std::span<const double>(data_).subspan(off, n);
  }

  std::size_t hidden_ = 0;
  std::vector<double> data_;
};

using SegmenterParams = ParamSet;
using GradientBundle = ParamSet;

/// He-style fan-in scaled normal initialisation; biases start at zero.
inline SegmenterParams init_params(std::size_t hidden, std::uint64_t seed) {
  SegmenterParams p(hidden);
  RandomSource rng(seed, kInitStream, 0);
  const double s1 = std::sqrt(2.0 / static_cast<double>(kKernelTaps));
  const double s2 = std::sqrt(2.0 / static_cast<double>(kKernelTaps * hidden));
  const double sh = std::sqrt(1.0 / static_cast<double>(hidden));
  for (double& w : p.conv1_w()) w = rng.normal(0.0, s1);
  for (double& w : p.conv2_w()) w = rng.normal(0.0, s2);
  for (double& w : p.head_w()) w = rng.normal(0.0, sh);
  return p;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Activations retained by forward for the matching backward call.
struct ForwardPass {
  Grid logits;
  ProbabilityMap probabilities;
  Grid input;
  std::vector<double> pre1;  // [h][H*W]
  std::vector<double> pre2;  // [h][H*W]
  std::uint64_t params_fingerprint = 0;
};

namespace detail {

/// out[r][c] += w * in[r+dy][c+dx] over the valid region (zero padding).
inline void shifted_axpy(const double* in, double w, int dy, int dx, double* out, int height, int width) {
  const int r0 = std::max(0, -dy), r1 = std::min(height, height - dy);
  const int c0 = std::max(0, -dx), c1 = std::min(width, width - dx);
  for (int r = r0; r < r1; ++r) {
    const double* src = in + (r + dy) * width + dx;
    double* dst = out + r * width;
    for (int c = c0; c < c1; ++c) dst[c] += w * src[c];
  }
}

/// sum over the valid region of a[r][c] * b[r+dy][c+dx].
inline double shifted_dot(const double* a, const double* b, int dy, int dx, int height, int width) {
  const int r0 = std::max(0, -dy), r1 = std::min(height, height - dy);
  const int c0 = std::max(0, -dx), c1 = std::min(width, width - dx);
  double sum = 0.0;
  for (int r = r0; r < r1; ++r) {
    const double* ar = a + r * width;
    const double* br = b + (r + dy) * width + dx;
    for (int c = c0; c < c1; ++c) sum += ar[c] * br[c];
  }
  return sum;
}

/// out[r+dy][c+dx] += w * in[r][c], the adjoint of shifted_axpy.
inline void shifted_axpy_adjoint(const double* in, double w, int dy, int dx, double* out, int height,
                                 int width) {
  shifted_axpy(in, w, -dy, -dx, out, height, width);
}

inline int tap_dy(std::size_t k) { return static_cast<int>(k / 3) - 1; }
inline int tap_dx(std::size_t k) { return static_cast<int>(k % 3) - 1; }

}  // namespace detail

/// conv3x3 -> ReLU -> conv3x3 -> ReLU -> conv1x1 -> sigmoid, same padding.
inline ForwardPass forward(const SegmenterParams& params, const Grid& image) {
  const std::size_t h = params.hidden();
  const int height = static_cast<int>(image.height());
  const int width = static_cast<int>(image.width());
  const std::size_t plane = image.size();

  ForwardPass pass;
  pass.input = image;
  pass.params_fingerprint = params.fingerprint();
  pass.pre1.assign(h * plane, 0.0);
  pass.pre2.assign(h * plane, 0.0);

  const auto w1 = params.conv1_w();
  const auto b1 = params.conv1_b();
  for (std::size_t o = 0; o < h; ++o) {
    double* out = pass.pre1.data() + o * plane;
    std::fill(out, out + plane, b1[o]);
    for (std::size_t k = 0; k < kKernelTaps; ++k) {
      detail::shifted_axpy(image.values().data(), w1[o * kKernelTaps + k], detail::tap_dy(k),
                           detail::tap_dx(k), out, height, width);
    }
  }
  std::vector<double> act1(pass.pre1.size());
  for (std::size_t i = 0; i < act1.size(); ++i) act1[i] = std::max(pass.pre1[i], 0.0);

  const auto w2 = params.conv2_w();
  const auto b2 = params.conv2_b();
  for (std::size_t o = 0; o < h; ++o) {
    double* out = pass.pre2.data() + o * plane;
    std::fill(out, out + plane, b2[o]);
    for (std::size_t i = 0; i < h; ++i) {
      const double* in = act1.data() + i * plane;
      for (std::size_t k = 0; k < kKernelTaps; ++k) {
        detail::shifted_axpy(in, w2[(o * h + i) * kKernelTaps + k], detail::tap_dy(k), detail::tap_dx(k),
                             out, height, width);
      }
    }
  }

  pass.logits = Grid(image.height(), image.width(), params.head_b());
  const auto wh = params.head_w();
  for (std::size_t c = 0; c < h; ++c) {
    const double* a2 = pass.pre2.data() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) pass.logits[p] += wh[c] * std::max(a2[p], 0.0);
  }
  pass.probabilities = ProbabilityMap(image.height(), image.width());
  for (std::size_t p = 0; p < plane; ++p) pass.probabilities[p] = sigmoid(pass.logits[p]);
  return pass;
}

/// Gradient of the mean pixel BCE against target, with dL/dz = (f - t) / (H W).
inline GradientBundle backward(const SegmenterParams& params, const ForwardPass& pass,
                               const LabelMap& target) {
  if (pass.params_fingerprint != params.fingerprint()) {
    throw StateError("backward: forward cache was produced by different parameters");
  }
  require_same_shape(pass.logits, target, "backward");
  const std::size_t h = params.hidden();
  const int height = static_cast<int>(target.height());
  const int width = static_cast<int>(target.width());
  const std::size_t plane = target.size();
  const double inv_n = 1.0 / static_cast<double>(plane);

  GradientBundle g(h);
  std::vector<double> dlogit(plane);
  for (std::size_t p = 0; p < plane; ++p) dlogit[p] = (sigmoid(pass.logits[p]) - target[p]) * inv_n;

  std::vector<double> act1(pass.pre1.size());
  for (std::size_t i = 0; i < act1.size(); ++i) act1[i] = std::max(pass.pre1[i], 0.0);

  // Head.
  g.head_b() = 0.0;
  for (double d : dlogit) g.head_b() += d;
  const auto wh = params.head_w();
  auto gwh = g.head_w();
  std::vector<double> dpre2(h * plane);
  for (std::size_t c = 0; c < h; ++c) {
    const double* a2 = pass.pre2.data() + c * plane;
    double* d2 = dpre2.data() + c * plane;
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const double act = std::max(a2[p], 0.0);
      acc += dlogit[p] * act;
      d2[p] = a2[p] > 0.0 ? dlogit[p] * wh[c] : 0.0;
    }
    gwh[c] = acc;
  }

  // Second convolution.
  const auto w2 = params.conv2_w();
  auto gw2 = g.conv2_w();
  auto gb2 = g.conv2_b();
  std::vector<double> dact1(h * plane, 0.0);
  for (std::size_t o = 0; o < h; ++o) {
    const double* d2 = dpre2.data() + o * plane;
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += d2[p];
    gb2[o] = acc;
    for (std::size_t i = 0; i < h; ++i) {
      const double* in = act1.data() + i * plane;
      double* din = dact1.data() + i * plane;
      for (std::size_t k = 0; k < kKernelTaps; ++k) {
        const int dy = detail::tap_dy(k), dx = detail::tap_dx(k);
        const std::size_t idx = (o * h + i) * kKernelTaps + k;
        gw2[idx] = detail::shifted_dot(d2, in, dy, dx, height, width);
        detail::shifted_axpy_adjoint(d2, w2[idx], dy, dx, din, height, width);
      }
    }
  }

  // First convolution.
  auto gw1 = g.conv1_w();
  auto gb1 = g.conv1_b();
  const double* img = pass.input.values().data();
  for (std::size_t o = 0; o < h; ++o) {
    const double* a1 = pass.pre1.data() + o * plane;
    const double* da = dact1.data() + o * plane;
    std::vector<double> d1(plane);
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      d1[p] = a1[p] > 0.0 ? da[p] : 0.0;
      acc += d1[p];
    }
    gb1[o] = acc;
    for (std::size_t k = 0; k < kKernelTaps; ++k) {
      gw1[o * kKernelTaps + k] = detail::shifted_dot(d1.data(), img, detail::tap_dy(k), detail::tap_dx(k),
                                                     height, width);
    }
  }
  return g;
}

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double lr = 1e-3;

  AdamState() = default;
  AdamState(std::size_t parameters, double learning_rate)
      : m(parameters, 0.0), v(parameters, 0.0), lr(learning_rate) {}

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update in place.
inline void adam_step(SegmenterParams& params, const GradientBundle& grads, AdamState& state) {
  if (!params.same_shape(grads) || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment shapes differ");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  auto p = params.values();
  const auto g = grads.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    state.m[i] = AdamState::kBeta1 * state.m[i] + (1.0 - AdamState::kBeta1) * g[i];
    state.v[i] = AdamState::kBeta2 * state.v[i] + (1.0 - AdamState::kBeta2) * g[i] * g[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    p[i] -= state.lr * mhat / (std::sqrt(vhat) + AdamState::kEpsilon);
  }
}

}  // namespace aslp
