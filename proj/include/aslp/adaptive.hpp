#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aslp/errors.hpp"
#include "aslp/perturb.hpp"

namespace aslp {

/// Which learning rule drives the per-sample perturbation parameters.
///  - MEI: per-sample alpha, accuracy regulariser (shared per epoch).
///  - MC:  per-sample alpha, calibration regulariser (per sample).
///  - ALS: alpha fixed at 1, per-sample smoothing strength beta.
enum class AdaptMode { MEI, MC, ALS };

inline constexpr double kDefaultEta = 0.002;
inline constexpr double kDefaultLambda = 2000.0;
inline constexpr double kMaxSmoothingBeta = 1.0 - kAlphaMargin;

inline std::string_view to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::MEI: return "mei";
    case AdaptMode::MC: return "mc";
    case AdaptMode::ALS: return "als";
  }
  return "?";
}

/// Normalised derivative of the expected SC-BCE with respect to alpha_i.
/// Scaling by 2 / beta makes it independent of the perturbation strength.
inline double grad_alpha(double loss_y, double loss_p, double beta) {
  if (!(beta > 0.0)) throw DomainError("grad_alpha: beta must be positive");
  return 2.0 * (loss_p - loss_y) / beta;
}

/// Relative validation accuracy drop, zero when there is none.
inline double reg_accuracy(double acc_val, double acc_ideal) {
  if (!(acc_ideal > 0.0)) throw DomainError("reg_accuracy: ideal accuracy must be positive");
  return std::min((acc_val - acc_ideal) / acc_ideal, 0.0);
}

/// Shortfall of the expected label confidence below the ideal accuracy.
inline double reg_calibration(double alpha, double beta, double acc_ideal) {
  return std::min(expected_confidence(alpha, beta) - acc_ideal, 0.0);
}

/// With alpha fixed at 1 the derivative of the expectation is the loss gap.
inline double grad_beta(double loss_y, double loss_p) { return loss_p - loss_y; }

class CalibState {
 public:
  CalibState() = default;

  /// MEI/MC: alpha_i = 0, beta_i = beta. ALS: alpha_i = 1, beta_i = 0.
  CalibState(AdaptMode mode, std::size_t samples, double beta, double eta, double lambda)
      : mode_(mode), eta_(eta), lambda_(lambda) {
    if (!(eta > 0.0)) throw DomainError("eta must be positive");
    if (!(lambda >= 0.0)) throw DomainError("lambda must be non-negative");
    if (mode == AdaptMode::ALS) {
      alphas_.assign(samples, 1.0);
      betas_.assign(samples, 0.0);
    } else {
      if (!(beta > 0.0 && beta <= 2.0)) throw DomainError("adaptive alpha requires beta in (0,2]");
      alphas_.assign(samples, 0.0);
      betas_.assign(samples, beta);
    }
    reset_accumulators();
  }

  AdaptMode mode() const noexcept { return mode_; }
  double eta() const noexcept { return eta_; }
  double lambda() const noexcept { return lambda_; }
  std::size_t size() const noexcept { return alphas_.size(); }

  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::vector<double>& betas() const noexcept { return betas_; }
  double alpha(std::size_t i) const { return alphas_.at(i); }
  double beta(std::size_t i) const { return betas_.at(i); }

  std::optional<double> ideal_accuracy() const noexcept { return ideal_accuracy_; }

  void set_ideal_accuracy(double acc) {
    if (ideal_accuracy_) throw StateError("ideal accuracy is already fixed");
    if (!(acc > 0.0 && acc <= 1.0)) throw DomainError("ideal accuracy must lie in (0,1]");
    ideal_accuracy_ = acc;
  }

  /// Adds one visit's losses against the ground truth and the perturbed label.
  void record(std::size_t i, double loss_y, double loss_p) {
    sum_y_.at(i) += loss_y;
    sum_p_.at(i) += loss_p;
    visits_.at(i) += 1;
  }

  bool has_losses(std::size_t i) const { return visits_.at(i) > 0; }
  double mean_loss_y(std::size_t i) const { return sum_y_.at(i) / static_cast<double>(visits_.at(i)); }
  double mean_loss_p(std::size_t i) const { return sum_p_.at(i) / static_cast<double>(visits_.at(i)); }

  void reset_accumulators() {
    sum_y_.assign(alphas_.size(), 0.0);
    sum_p_.assign(alphas_.size(), 0.0);
    visits_.assign(alphas_.size(), 0);
  }

  /// Raw restoration used by checkpoint loading.
  static CalibState restore(AdaptMode mode, double eta, double lambda, std::vector<double> alphas,
                            std::vector<double> betas, std::optional<double> ideal) {
    if (alphas.size() != betas.size()) throw ShapeError("calibration state size mismatch");
    CalibState s;
    s.mode_ = mode;
    s.eta_ = eta;
    s.lambda_ = lambda;
    s.alphas_ = std::move(alphas);
    s.betas_ = std::move(betas);
    s.ideal_accuracy_ = ideal;
    s.reset_accumulators();
    return s;
  }

  friend void update_alphas(CalibState& state, double acc_val);
  friend void update_betas(CalibState& state, double acc_ideal);

 private:
  void require_losses() const {
    for (std::size_t i = 0; i < visits_.size(); ++i) {
      if (visits_[i] == 0) {
        throw StateError("no losses recorded for sample " + std::to_string(i) + " this epoch");
      }
    }
  }

  AdaptMode mode_ = AdaptMode::MC;
  double eta_ = kDefaultEta;
  double lambda_ = kDefaultLambda;
  std::vector<double> alphas_;
  std::vector<double> betas_;
  std::optional<double> ideal_accuracy_;
  std::vector<double> sum_y_;
  std::vector<double> sum_p_;
  std::vector<std::size_t> visits_;
};

/// One epoch-end step of the alpha rule:
///   alpha_i <- clamp(alpha_i + eta (grad_alpha_i + lambda Reg)).
/// Reg is the accuracy regulariser (MEI, one value for every sample) or the
/// per-sample calibration regulariser (MC). acc_val is ignored in MC mode.
inline void update_alphas(CalibState& state, double acc_val) {
  if (state.mode_ == AdaptMode::ALS) throw StateError("update_alphas: state is in ALS mode");
  if (!state.ideal_accuracy_) throw StateError("update_alphas: ideal accuracy not set");
  state.require_losses();
  const double ideal = *state.ideal_accuracy_;
  const double reg_a = state.mode_ == AdaptMode::MEI ? reg_accuracy(acc_val, ideal) : 0.0;
  for (std::size_t i = 0; i < state.alphas_.size(); ++i) {
    const double beta = state.betas_[i];
    const double grad = grad_alpha(state.mean_loss_y(i), state.mean_loss_p(i), beta);
    const double reg =
        state.mode_ == AdaptMode::MEI ? reg_a : reg_calibration(state.alphas_[i], beta, ideal);
    const double next = state.alphas_[i] + state.eta_ * (grad + state.lambda_ * reg);
    state.alphas_[i] = std::clamp(next, 0.0, max_alpha(beta));
  }
  state.reset_accumulators();
}

/// One epoch-end step of adaptive label smoothing:
///   beta_i <- clamp(beta_i + eta (grad_beta_i + lambda min(1 - beta_i/2 - A_ideal, 0))).
inline void update_betas(CalibState& state, double acc_ideal) {
  if (state.mode_ != AdaptMode::ALS) throw StateError("update_betas: state is not in ALS mode");
  state.require_losses();
  for (std::size_t i = 0; i < state.betas_.size(); ++i) {
    const double grad = grad_beta(state.mean_loss_y(i), state.mean_loss_p(i));
    const double reg = reg_calibration(1.0, state.betas_[i], acc_ideal);
    const double next = state.betas_[i] + state.eta_ * (grad + state.lambda_ * reg);
    state.betas_[i] = std::clamp(next, 0.0, kMaxSmoothingBeta);
  }
  state.reset_accumulators();
}

}  // namespace aslp
