#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>

#include "aslp/errors.hpp"
#include "aslp/grid.hpp"
#include "aslp/random.hpp"

namespace aslp {

enum class Technique { HardInversion, SoftInversion, Moderation, DynamicModeration, LabelSmoothing };

/// Margin kept from the open upper bound alpha < 1/beta.
inline constexpr double kAlphaMargin = 1e-3;

/// Bounds of the truncated-normal noise added by dynamic moderation.
inline constexpr double kDynamicNoiseLo = -0.5;
inline constexpr double kDynamicNoiseHi = 0.5;

inline std::string_view to_string(Technique t) {
  switch (t) {
    case Technique::HardInversion: return "hi";
    case Technique::SoftInversion: return "si";
    case Technique::Moderation: return "m";
    case Technique::DynamicModeration: return "dm";
    case Technique::LabelSmoothing: return "ls";
  }
  return "?";
}

inline Technique parse_technique(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "hi") return Technique::HardInversion;
  if (lower == "si") return Technique::SoftInversion;
  if (lower == "m") return Technique::Moderation;
  if (lower == "dm") return Technique::DynamicModeration;
  if (lower == "ls") return Technique::LabelSmoothing;
  throw ConfigError("unknown perturbation technique '" + std::string(name) +
                    "' (expected hi|si|m|dm|ls)");
}

/// Strength that reproduces each technique's label transform:
/// HI 1-y, SI -0.5y+0.75, M and DM 0.5.
inline double default_beta(Technique t) {
  switch (t) {
    case Technique::HardInversion: return 2.0;
    case Technique::SoftInversion: return 1.5;
    case Technique::Moderation: return 1.0;
    case Technique::DynamicModeration: return 1.0;
    case Technique::LabelSmoothing: return 0.1;
  }
  return 0.0;
}

struct PerturbationSpec {
  Technique technique = Technique::HardInversion;
  double beta = 2.0;
  bool noise = false;

  static PerturbationSpec make(Technique t) { return make(t, default_beta(t)); }

  static PerturbationSpec make(Technique t, double beta) {
    PerturbationSpec spec{t, beta, t == Technique::DynamicModeration};
    spec.validate();
    return spec;
  }

  void validate() const {
    if (!(beta >= 0.0 && beta <= 2.0)) {
      throw DomainError("perturbation strength beta = " + std::to_string(beta) +
                        " outside [0,2]");
    }
    if (technique == Technique::LabelSmoothing && !(beta < 1.0)) {
      throw DomainError("label smoothing requires beta < 1");
    }
    if (noise != (technique == Technique::DynamicModeration)) {
      throw DomainError("noise flag is reserved for dynamic moderation");
    }
  }

  friend bool operator==(const PerturbationSpec&, const PerturbationSpec&) = default;
};

/// Largest legal perturbation probability for a given strength.
inline double max_alpha(double beta) {
  if (beta <= 0.0) return 1.0;
  return std::min(1.0, 1.0 / beta - kAlphaMargin);
}

inline double perturbed_value(double y, double beta) { return (1.0 - beta) * y + beta / 2.0; }

/// p(y, beta) = (1 - beta) y + beta / 2 applied per pixel.
inline LabelMap perturb_label(const LabelMap& y, double beta) {
  if (!(beta >= 0.0 && beta <= 2.0)) {
    throw DomainError("perturb_label: beta = " + std::to_string(beta) + " outside [0,2]");
  }
  LabelMap out(y.height(), y.width());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = perturbed_value(y[i], beta);
  return out;
}

/// Moderation plus one truncated-normal offset shared by every pixel of the
/// image. With beta = 1 every pixel becomes 0.5 + e.
inline LabelMap perturb_dynamic(const LabelMap& y, RandomSource& source, double beta = 1.0) {
  const double e = source.truncated_normal(kDynamicNoiseLo, kDynamicNoiseHi, 0.0, 1.0);
  LabelMap out = perturb_label(y, beta);
  for (double& v : out) v = std::clamp(v + e, 0.0, 1.0);
  return out;
}

struct Supervision {
  LabelMap label;
  bool perturbed = false;
};

/// Draws Z ~ Bernoulli(alpha) once for the whole image and returns either
/// the ground truth or the perturbed label.
inline Supervision sample_supervision(const LabelMap& y, double alpha, const PerturbationSpec& spec,
                                      RandomSource& source) {
  if (!(alpha >= 0.0 && alpha <= max_alpha(spec.beta))) {
    throw DomainError("perturbation probability alpha = " + std::to_string(alpha) +
                      " outside [0, " + std::to_string(max_alpha(spec.beta)) + "]");
  }
  if (!source.bernoulli(alpha)) return {y, false};
  if (spec.noise) return {perturb_dynamic(y, source, spec.beta), true};
  return {perturb_label(y, spec.beta), true};
}

/// Confidence of the expected supervision, 1 - alpha * beta / 2.
inline double expected_confidence(double alpha, double beta) {
  const double ab = alpha * beta;
  if (!(ab >= 0.0 && ab < 1.0)) {
    throw DomainError("expected_confidence: alpha*beta = " + std::to_string(ab) +
                      " outside [0,1)");
  }
  return 1.0 - ab / 2.0;
}

}  // namespace aslp
