#pragma once

#include <algorithm>
#include <cmath>

#include "aslp/errors.hpp"
#include "aslp/grid.hpp"
#include "aslp/perturb.hpp"

namespace aslp {

/// Predictions are clamped to [eps, 1 - eps] before any logarithm.
inline constexpr double kProbEps = 1e-7;

inline double clamp_prob(double f) { return std::clamp(f, kProbEps, 1.0 - kProbEps); }

inline double bce_pixel(double f, double t) {
  const double p = clamp_prob(f);
  return -t * std::log(p) - (1.0 - t) * std::log1p(-p);
}

/// Mean binary cross entropy over pixels, in nats.
inline double bce(const ProbabilityMap& pred, const LabelMap& target) {
  require_same_shape(pred, target, "bce");
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += bce_pixel(pred[i], target[i]);
  return sum / static_cast<double>(pred.size());
}

/// Cross entropy against the constant 0.5 map.
inline double bce_uniform(const ProbabilityMap& pred) {
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (double f : pred) sum += bce_pixel(f, 0.5);
  return sum / static_cast<double>(pred.size());
}

/// Loss for one draw of Z: ground truth when z is false, p(y, beta) otherwise.
/// Dynamic moderation is scored against its noise-free label; the loss is
/// linear in the target so this is the expectation over the noise.
inline double sc_bce_sampled(const ProbabilityMap& pred, const LabelMap& y, bool z,
                             const PerturbationSpec& spec) {
  if (!z) return bce(pred, y);
  return bce(pred, perturb_label(y, spec.beta));
}

/// (1 - beta z) BCE(y) + beta z BCE(U).
inline double sc_bce_factored(const ProbabilityMap& pred, const LabelMap& y, bool z, double beta) {
  const double loss_y = bce(pred, y);
  if (!z) return loss_y;
  return (1.0 - beta) * loss_y + beta * bce_uniform(pred);
}

/// Mean Shannon entropy of the per-pixel Bernoulli predictions.
inline double entropy(const ProbabilityMap& pred) {
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (double f : pred) {
    const double p = clamp_prob(f);
    sum += -p * std::log(p) - (1.0 - p) * std::log1p(-p);
  }
  return sum / static_cast<double>(pred.size());
}

/// BCE against the label-smoothed target (1 - sigma) y + sigma / 2.
inline double smoothed_bce(const ProbabilityMap& pred, const LabelMap& y, double sigma) {
  if (!(sigma >= 0.0 && sigma < 1.0)) {
    throw DomainError("smoothed_bce: sigma = " + std::to_string(sigma) + " outside [0,1)");
  }
  return bce(pred, perturb_label(y, sigma));
}

}  // namespace aslp
