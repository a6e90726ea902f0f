#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aslp/adaptive.hpp"
#include "aslp/checkpoint.hpp"
#include "aslp/loss.hpp"
#include "aslp/mapfile.hpp"
#include "aslp/metrics.hpp"
#include "aslp/model.hpp"
#include "aslp/parallel.hpp"
#include "aslp/perturb.hpp"
#include "aslp/synthdata.hpp"

namespace aslp {

enum class TrainMode { Baseline, Slp, Mei, Mc, Als };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Baseline: return "baseline";
    case TrainMode::Slp: return "slp";
    case TrainMode::Mei: return "mei";
    case TrainMode::Mc: return "mc";
    case TrainMode::Als: return "als";
  }
  return "?";
}

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "baseline") return TrainMode::Baseline;
  if (s == "slp") return TrainMode::Slp;
  if (s == "mei") return TrainMode::Mei;
  if (s == "mc") return TrainMode::Mc;
  if (s == "als") return TrainMode::Als;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected baseline|slp|mei|mc|als)");
}

struct TrainConfig {
  std::size_t epochs_baseline = 30;
  std::size_t epochs_aslp = 30;
  double learning_rate = 3e-3;
  TrainMode mode = TrainMode::Baseline;
  PerturbationSpec perturbation = PerturbationSpec::make(Technique::HardInversion);
  double static_alpha = 0.0;
  double eta = kDefaultEta;
  double lambda = kDefaultLambda;
  std::uint64_t seed = 7;
  std::size_t hidden = kDefaultHidden;
  std::size_t bins = kDefaultBins;
  std::string manifest;

  void validate() const {
    perturbation.validate();
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(eta > 0.0)) throw ConfigError("eta must be positive");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (mode == TrainMode::Slp && !(static_alpha >= 0.0 && static_alpha <= max_alpha(perturbation.beta))) {
      throw ConfigError("static alpha must lie in [0, 1/beta)");
    }
    if ((mode == TrainMode::Mei || mode == TrainMode::Mc) && !(perturbation.beta > 0.0)) {
      throw ConfigError("adaptive alpha needs a positive perturbation strength");
    }
  }

  std::map<std::string, std::string> echo() const {
    return {{"mode", std::string(to_string(mode))},
            {"technique", std::string(to_string(perturbation.technique))},
            {"beta", format_real(perturbation.beta)},
            {"alpha", format_real(static_alpha)},
            {"eta", format_real(eta)},
            {"lambda", format_real(lambda)},
            {"lr", format_real(learning_rate)},
            {"seed", std::to_string(seed)},
            {"hidden", std::to_string(hidden)},
            {"epochs_baseline", std::to_string(epochs_baseline)},
            {"epochs_aslp", std::to_string(epochs_aslp)},
            {"data", manifest}};
  }
};

/// Records of one dataset grouped by split, each ordered by sample id.
struct Dataset {
  std::vector<SampleRecord> train, val, test, ood;

  static Dataset from_records(const std::vector<SampleRecord>& records) {
    Dataset d;
    for (const auto& r : records) d.split(r.split).push_back(r);
    for (auto* s : {&d.train, &d.val, &d.test, &d.ood}) {
      std::sort(s->begin(), s->end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
    }
    return d;
  }

  std::vector<SampleRecord>& split(Split s) {
    switch (s) {
      case Split::Train: return train;
      case Split::Val: return val;
      case Split::Test: return test;
      case Split::Ood: return ood;
    }
    return train;
  }
  const std::vector<SampleRecord>& split(Split s) const { return const_cast<Dataset*>(this)->split(s); }
};

struct Quartiles {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

inline Quartiles quartiles(std::vector<double> v) {
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {v.front(), at(0.25), at(0.5), at(0.75), v.back()};
}

struct EpochReport {
  std::string_view phase;
  std::uint64_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  std::size_t perturbed = 0;
  std::optional<Quartiles> alphas;
  std::optional<Quartiles> betas;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// Forward passes over images, fanned out over ASLP_THREADS workers.
inline std::vector<ForwardPass> forward_all(const SegmenterParams& params, const std::vector<SampleRecord>& split) {
  std::vector<ForwardPass> out(split.size());
  parallel_for(split.size(), [&](std::size_t i) { out[i] = forward(params, split[i].image); });
  return out;
}

inline double split_accuracy(const SegmenterParams& params, const std::vector<SampleRecord>& split) {
  const auto passes = forward_all(params, split);
  std::size_t correct = 0, total = 0;
  for (std::size_t k = 0; k < split.size(); ++k) {
    const auto& pred = passes[k].probabilities;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      correct += predicted_foreground(pred[i]) == (split[k].label[i] > 0.5) ? 1 : 0;
    }
    total += pred.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

namespace detail {

inline void require_finite(double loss, std::uint64_t epoch, std::uint64_t sample) {
  if (!std::isfinite(loss)) {
    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + std::to_string(sample));
  }
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stream,
                                            std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomSource rng(seed, stream, epoch);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

}  // namespace detail

/// Plain BCE training against ground truth (alpha = 0, beta = 0). The
/// final validation accuracy becomes the ideal accuracy anchoring every
/// adaptive rule.
inline Checkpoint train_baseline(const TrainConfig& cfg, const Dataset& data, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("training split is empty");
  if (data.val.empty()) throw ConfigError("validation split is empty");
  Checkpoint ck;
  ck.params = init_params(cfg.hidden, cfg.seed);
  ck.adam = AdamState(ck.params.size(), cfg.learning_rate);
  for (std::uint64_t epoch = 0; epoch < cfg.epochs_baseline; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t i : detail::epoch_order(data.train.size(), cfg.seed, kShuffleStream, epoch)) {
      const auto& rec = data.train[i];
      const auto pass = forward(ck.params, rec.image);
      const double loss = bce(pass.probabilities, rec.label);
      detail::require_finite(loss, epoch, rec.sample_id);
      loss_sum += loss;
      adam_step(ck.params, backward(ck.params, pass, rec.label), ck.adam);
    }
    ck.epoch = epoch + 1;
    if (on_epoch) {
      on_epoch({"baseline", ck.epoch, loss_sum / static_cast<double>(data.train.size()),
                split_accuracy(ck.params, data.val), 0, std::nullopt, std::nullopt});
    }
  }
  if (!ck.params.all_finite()) throw DivergenceError("baseline parameters are not finite");
  ck.ideal_accuracy = split_accuracy(ck.params, data.val);
  auto echo = cfg.echo();
  echo["mode"] = "baseline";
  ck.config = std::move(echo);
  return ck;
}

/// SC-BCE continuation from a baseline checkpoint. Each epoch draws one
/// Bernoulli variable per image, trains on the selected supervision, and
/// accumulates the losses against both the ground truth and the perturbed
/// label; the epoch ends with the mode's alpha or beta update.
inline Checkpoint train_adaptive(const TrainConfig& cfg, const Dataset& data, const Checkpoint& baseline,
                                 const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (cfg.mode == TrainMode::Baseline) throw ConfigError("train_adaptive needs slp, mei, mc or als mode");
  if (!baseline.ideal_accuracy) throw StateError("baseline checkpoint carries no ideal accuracy");
  if (data.train.empty()) throw ConfigError("training split is empty");
  if (data.val.empty()) throw ConfigError("validation split is empty");
  const double ideal = *baseline.ideal_accuracy;
  const std::size_t n = data.train.size();

  Checkpoint ck;
  ck.params = baseline.params;
  ck.adam = baseline.adam;
  ck.adam.lr = cfg.learning_rate;
  ck.ideal_accuracy = ideal;
  ck.epoch = baseline.epoch;

  std::optional<CalibState> state;
  if (cfg.mode == TrainMode::Mei || cfg.mode == TrainMode::Mc) {
    state.emplace(cfg.mode == TrainMode::Mei ? AdaptMode::MEI : AdaptMode::MC, n, cfg.perturbation.beta, cfg.eta,
                  cfg.lambda);
  } else if (cfg.mode == TrainMode::Als) {
    state.emplace(AdaptMode::ALS, n, 0.0, cfg.eta, cfg.lambda);
  }
  if (state) state->set_ideal_accuracy(ideal);

  for (std::size_t e = 0; e < cfg.epochs_aslp; ++e) {
    const std::uint64_t epoch = ck.epoch;
    double loss_sum = 0.0;
    std::size_t perturbed = 0;
    for (std::size_t i : detail::epoch_order(n, cfg.seed, kAdaptiveShuffleStream, epoch)) {
      const auto& rec = data.train[i];
      PerturbationSpec spec = cfg.perturbation;
      double alpha = cfg.static_alpha;
      if (state) {
        alpha = state->alpha(i);
        if (state->mode() == AdaptMode::ALS) spec = PerturbationSpec{Technique::LabelSmoothing, state->beta(i), false};
      }
      RandomSource rng(cfg.seed, rec.sample_id, epoch);
      const auto sup = sample_supervision(rec.label, alpha, spec, rng);
      perturbed += sup.perturbed ? 1 : 0;

      const auto pass = forward(ck.params, rec.image);
      const double loss = bce(pass.probabilities, sup.label);
      detail::require_finite(loss, epoch, rec.sample_id);
      loss_sum += loss;
      if (state) {
        state->record(i, bce(pass.probabilities, rec.label),
                      bce(pass.probabilities, perturb_label(rec.label, spec.beta)));
      }
      adam_step(ck.params, backward(ck.params, pass, sup.label), ck.adam);
    }
    ck.epoch = epoch + 1;
    const double val_acc = split_accuracy(ck.params, data.val);
    if (state) {
      if (state->mode() == AdaptMode::ALS) {
        update_betas(*state, ideal);
      } else {
        update_alphas(*state, val_acc);
      }
    }
    if (on_epoch) {
      EpochReport report{to_string(cfg.mode), ck.epoch, loss_sum / static_cast<double>(n), val_acc, perturbed,
                         std::nullopt, std::nullopt};
      if (state) {
        report.alphas = quartiles(state->alphas());
        report.betas = quartiles(state->betas());
      }
      on_epoch(report);
    }
  }
  if (!ck.params.all_finite()) throw DivergenceError("adaptive parameters are not finite");
  ck.calib = std::move(state);
  ck.config = cfg.echo();
  return ck;
}

struct MetricSummary {
  std::size_t images = 0;
  std::size_t pixels = 0;
  double accuracy = 0.0;
  double ece_ew = 0.0;
  double oe_ew = 0.0;
  double ece_em = 0.0;
  double oe_em = 0.0;
  double ece_sweep = 0.0;
  double oe_sweep = 0.0;
  std::size_t sweep_bins = 0;
  double ece_debias = 0.0;
  /// Absent when the ground truth has no foreground pixel.
  std::optional<double> f_max;
  double e_max = 0.0;
  double mean_entropy = 0.0;

  /// (metric, value) pairs in a fixed order.
  std::vector<std::pair<std::string, std::string>> rows() const {
    std::vector<std::pair<std::string, std::string>> out{
        {"images", std::to_string(images)},
        {"pixels", std::to_string(pixels)},
        {"accuracy", format_real(accuracy)},
        {"ece_ew", format_real(ece_ew)},
        {"oe_ew", format_real(oe_ew)},
        {"ece_em", format_real(ece_em)},
        {"oe_em", format_real(oe_em)},
        {"ece_sweep", format_real(ece_sweep)},
        {"oe_sweep", format_real(oe_sweep)},
        {"sweep_bins", std::to_string(sweep_bins)},
        {"ece_debias", format_real(ece_debias)},
        {"f_max", f_max ? format_real(*f_max) : std::string("nan")},
        {"e_max", format_real(e_max)},
        {"mean_entropy", format_real(mean_entropy)}};
    return out;
  }
};

struct Evaluation {
  MetricSummary summary;
  std::vector<BinStats> reliability;
  std::vector<std::vector<ConfidenceRecord>> per_image;
};

/// Every metric over pooled pixels of externally supplied prediction maps.
inline Evaluation evaluate_maps(const std::vector<ProbabilityMap>& preds, const std::vector<LabelMap>& gts,
                                std::size_t bins = kDefaultBins) {
  if (preds.size() != gts.size()) throw ShapeError("evaluate_maps: prediction and label counts differ");
  if (bins == 0) throw DomainError("evaluate_maps: need at least one bin");
  Evaluation ev;
  std::vector<ConfidenceRecord> records;
  double entropy_sum = 0.0;
  bool any_foreground = false;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    ev.per_image.push_back(winning_class(preds[k], gts[k]));
    records.insert(records.end(), ev.per_image.back().begin(), ev.per_image.back().end());
    entropy_sum += entropy(preds[k]) * static_cast<double>(preds[k].size());
    any_foreground = any_foreground || std::any_of(gts[k].begin(), gts[k].end(), [](double v) { return v > 0.5; });
  }
  auto& s = ev.summary;
  s.images = preds.size();
  s.pixels = records.size();
  if (records.empty()) return ev;
  s.accuracy = accuracy(records);
  ev.reliability = bin_equal_width(records, bins);
  s.ece_ew = ece(ev.reliability);
  s.oe_ew = oe(ev.reliability);
  s.ece_debias = ece_debias(ev.reliability);
  const auto mass = bin_equal_mass(records, std::min(bins, records.size()));
  s.ece_em = ece(mass);
  s.oe_em = oe(mass);
  const auto sweep = ece_sweep(records);
  s.ece_sweep = sweep.value;
  s.oe_sweep = sweep.oe;
  s.sweep_bins = sweep.bins;
  if (any_foreground) s.f_max = f_measure_max(preds, gts);
  s.e_max = e_measure_max(preds, gts);
  s.mean_entropy = entropy_sum / static_cast<double>(records.size());
  return ev;
}

/// Probability maps of the model over a split, with logits divided by the
/// temperature and values rounded to map-file precision.
inline std::vector<ProbabilityMap> predict(const SegmenterParams& params, const std::vector<SampleRecord>& split,
                                           double temperature = 1.0) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  const auto passes = forward_all(params, split);
  std::vector<ProbabilityMap> out;
  out.reserve(passes.size());
  for (const auto& pass : passes) {
    ProbabilityMap p(pass.logits.height(), pass.logits.width());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(pass.logits[i] / temperature);
    out.push_back(quantize_f32(std::move(p)));
  }
  return out;
}

inline Evaluation evaluate(const Checkpoint& ck, const std::vector<SampleRecord>& split,
                           std::size_t bins = kDefaultBins, double temperature = 1.0) {
  for (const auto& r : split) {
    if (r.image.empty()) throw ShapeError("evaluate: empty image in split");
  }
  const auto preds = predict(ck.params, split, temperature);
  std::vector<LabelMap> gts;
  gts.reserve(split.size());
  for (const auto& r : split) gts.push_back(r.label);
  return evaluate_maps(preds, gts, bins);
}

inline constexpr double kTemperatureLo = 0.05;
inline constexpr double kTemperatureHi = 20.0;
inline constexpr double kTemperatureTol = 1e-4;

/// Minimises mean BCE of sigmoid(logit / T) by golden-section search on
/// log T over [log 0.05, log 20].
inline double fit_temperature(const std::vector<Grid>& logits, const std::vector<LabelMap>& labels) {
  if (logits.size() != labels.size()) throw ShapeError("fit_temperature: logit and label counts differ");
  if (logits.empty()) throw DomainError("fit_temperature: empty validation split");
  auto objective = [&](double log_t) {
    const double inv_t = std::exp(-log_t);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      require_same_shape(logits[k], labels[k], "fit_temperature");
      for (std::size_t i = 0; i < logits[k].size(); ++i) sum += bce_pixel(sigmoid(logits[k][i] * inv_t), labels[k][i]);
      n += logits[k].size();
    }
    return sum / static_cast<double>(n);
  };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(kTemperatureLo), b = std::log(kTemperatureHi);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = objective(c), fd = objective(d);
  while (b - a > kTemperatureTol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = objective(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = objective(d);
    }
  }
  return std::exp(0.5 * (a + b));
}

inline double fit_temperature(const Checkpoint& ck, const std::vector<SampleRecord>& val) {
  if (val.empty()) throw DomainError("fit_temperature: empty validation split");
  const auto passes = forward_all(ck.params, val);
  std::vector<Grid> logits;
  std::vector<LabelMap> labels;
  for (std::size_t k = 0; k < val.size(); ++k) {
    logits.push_back(passes[k].logits);
    labels.push_back(val[k].label);
  }
  return fit_temperature(logits, labels);
}

}  // namespace aslp
