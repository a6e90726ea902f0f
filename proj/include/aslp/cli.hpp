#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aslp/checkpoint.hpp"
#include "aslp/files.hpp"
#include "aslp/mapfile.hpp"
#include "aslp/metrics.hpp"
#include "aslp/synthdata.hpp"
#include "aslp/trainer.hpp"

namespace aslp::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kIo = 3, kProtocol = 4, kNumeric = 5 };

/// A command was invoked without the checkpoint it depends on.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
inline std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(lines, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!out.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return out;
}

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("bad value '" + value + "' for " + key);
  }
  return out;
}

}  // namespace detail

inline GeneratorConfig generator_config_from(const std::map<std::string, std::string>& kv) {
  GeneratorConfig cfg;
  const std::map<std::string, std::size_t*> sizes{
      {"height", &cfg.height},       {"width", &cfg.width}, {"train", &cfg.train},
      {"val", &cfg.val},             {"test", &cfg.test},   {"ood", &cfg.ood},
      {"blobs_min", &cfg.blobs_min}, {"blobs_max", &cfg.blobs_max}};
  const std::map<std::string, double*> reals{{"overlap", &cfg.overlap},
                                             {"foreground_mean", &cfg.foreground_mean},
                                             {"background_mean", &cfg.background_mean},
                                             {"intensity_sigma", &cfg.intensity_sigma},
                                             {"pixel_sigma", &cfg.pixel_sigma}};
  for (const auto& [key, value] : kv) {
    if (auto it = sizes.find(key); it != sizes.end()) {
      *it->second = detail::parse_number<std::size_t>(key, value);
    } else if (auto jt = reals.find(key); jt != reals.end()) {
      *jt->second = detail::parse_number<double>(key, value);
    } else if (key == "seed") {
      cfg.seed = detail::parse_number<std::uint64_t>(key, value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline std::vector<double> parse_alpha_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    std::string item = text.substr(start, comma - start);
    item.erase(std::remove_if(item.begin(), item.end(), [](char c) { return c == ' '; }), item.end());
    out.push_back(detail::parse_number<double>("--alphas", item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline void write_lines(const std::filesystem::path& path, const std::string& header,
                        const std::vector<std::string>& rows) {
  std::string text = header + "\n";
  for (const auto& r : rows) text += r + "\n";
  io::write_text(path, text);
}

inline void print_summary(std::ostream& out, const MetricSummary& s, bool csv) {
  const auto rows = s.rows();
  if (csv) {
    out << "metric,value\n";
    for (const auto& [k, v] : rows) out << k << "," << v << "\n";
    return;
  }
  for (const auto& [k, v] : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-14s %s\n", k.c_str(), v.c_str());
    out << buf;
  }
}

struct GenerateArgs {
  std::string config;
  std::string out;
};

inline int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  GeneratorConfig cfg;
  if (!a.config.empty()) cfg = generator_config_from(parse_key_values(io::read_text(a.config), a.config));
  const auto records = generate_dataset(cfg);
  const auto manifest = write_dataset(records, a.out);
  for (const auto& [split, n] : split_counts(records)) out << to_string(split) << "\t" << n << "\n";
  out << "manifest\t" << manifest.string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string mode = "baseline";
  std::string data;
  std::string from;
  std::string out;
  std::optional<double> alpha;
  std::string technique = "hi";
  std::optional<double> beta;
  std::optional<double> eta;
  std::optional<double> lambda;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> hidden;
  bool csv = false;
};

inline TrainConfig train_config_from(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.mode = parse_train_mode(a.mode);
  const Technique t = parse_technique(a.technique);
  cfg.perturbation = a.beta ? PerturbationSpec::make(t, *a.beta) : PerturbationSpec::make(t);
  if (a.alpha) {
    if (cfg.mode != TrainMode::Slp) throw ConfigError("--alpha applies to slp mode only");
    cfg.static_alpha = *a.alpha;
  }
  if (a.eta) cfg.eta = *a.eta;
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.epochs) (cfg.mode == TrainMode::Baseline ? cfg.epochs_baseline : cfg.epochs_aslp) = *a.epochs;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.seed) cfg.seed = *a.seed;
  if (a.hidden) cfg.hidden = *a.hidden;
  cfg.manifest = a.data;
  cfg.validate();
  return cfg;
}

inline EpochCallback epoch_printer(std::ostream& out, bool csv) {
  if (csv) out << "phase,epoch,train_loss,val_acc,perturbed,q_min,q1,median,q3,q_max\n";
  return [&out, csv](const EpochReport& r) {
    std::optional<Quartiles> q = r.alphas;
    if (r.phase == "als") q = r.betas;
    auto real = [](double v) { return format_real(v); };
    if (csv) {
      out << r.phase << "," << r.epoch << "," << real(r.train_loss) << "," << real(r.val_accuracy) << ","
          << r.perturbed;
      if (q) {
        out << "," << real(q->min) << "," << real(q->q1) << "," << real(q->median) << "," << real(q->q3) << ","
            << real(q->max);
      } else {
        out << ",,,,,";
      }
      out << "\n";
      return;
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-8s epoch %3llu  loss %.6f  val_acc %.4f", std::string(r.phase).c_str(),
                  static_cast<unsigned long long>(r.epoch), r.train_loss, r.val_accuracy);
    out << buf;
    if (q) {
      std::snprintf(buf, sizeof buf, "  perturbed %zu  %s [%.4g %.4g %.4g %.4g %.4g]", r.perturbed,
                    r.phase == "als" ? "beta" : "alpha", q->min, q->q1, q->median, q->q3, q->max);
      out << buf;
    } else if (r.phase != "baseline") {
      std::snprintf(buf, sizeof buf, "  perturbed %zu", r.perturbed);
      out << buf;
    }
    out << "\n";
  };
}

inline Checkpoint load_anchor(const std::string& from) {
  if (from.empty()) throw ProtocolError("this mode continues a baseline checkpoint; pass --from");
  Checkpoint ck = load_checkpoint(from);
  if (!ck.ideal_accuracy) throw ProtocolError(from + " carries no ideal accuracy");
  return ck;
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  const TrainConfig cfg = train_config_from(a);
  const Checkpoint anchor = cfg.mode == TrainMode::Baseline ? Checkpoint{} : load_anchor(a.from);
  const Dataset data = Dataset::from_records(read_dataset(a.data));
  const auto printer = epoch_printer(out, a.csv);
  const Checkpoint ck =
      cfg.mode == TrainMode::Baseline ? train_baseline(cfg, data, printer) : train_adaptive(cfg, data, anchor, printer);
  save_checkpoint(a.out, ck);
  if (!a.csv) {
    out << "ideal_accuracy " << format_real(*ck.ideal_accuracy) << "\n";
    out << "checkpoint " << a.out << "\n";
  }
  return kOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::size_t bins = kDefaultBins;
  std::string export_reliability;
  std::string export_joint;
  std::string export_maps;
  std::optional<double> temperature;
  bool fit_temperature = false;
  bool csv = false;
};

inline void export_extras(const Evaluation& ev, std::size_t bins, const std::string& reliability,
                          const std::string& joint) {
  if (!reliability.empty()) write_lines(reliability, kReliabilityHeader, reliability_export(ev.reliability));
  if (!joint.empty()) write_lines(joint, kJointHeader, joint_histogram(ev.per_image, bins, bins).csv_rows());
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto split = parse_split(a.split);
  if (!split) throw ConfigError("unknown split '" + a.split + "' (expected train|val|test|ood)");
  if (a.temperature && a.fit_temperature) throw ConfigError("--temperature and --fit-temperature are exclusive");
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const Dataset data = Dataset::from_records(read_dataset(a.data));
  const auto& records = data.split(*split);
  if (records.empty()) throw ConfigError("split '" + a.split + "' is empty");
  double temperature = a.temperature.value_or(1.0);
  if (a.fit_temperature) temperature = aslp::fit_temperature(ck, data.val);
  if (a.bins == 0) throw ConfigError("--bins must be at least 1");

  const auto preds = predict(ck.params, records, temperature);
  std::vector<LabelMap> gts;
  for (const auto& r : records) gts.push_back(r.label);
  const Evaluation ev = evaluate_maps(preds, gts, a.bins);
  print_summary(out, ev.summary, a.csv);
  if (!a.csv && temperature != 1.0) out << "temperature    " << format_real(temperature) << "\n";
  export_extras(ev, a.bins, a.export_reliability, a.export_joint);
  if (!a.export_maps.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir(a.export_maps);
    std::error_code ec;
    fs::create_directories(dir / "pred", ec);
    fs::create_directories(dir / "gt", ec);
    if (ec) throw io::IoError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t k = 0; k < records.size(); ++k) {
      const std::string name = std::to_string(records[k].sample_id) + ".dbmp";
      write_map(dir / "pred" / name, preds[k], MapDtype::Probability);
      write_map(dir / "gt" / name, gts[k], MapDtype::HardLabel);
    }
  }
  return kOk;
}

struct EvalMapsArgs {
  std::string pred;
  std::string gt;
  std::size_t bins = kDefaultBins;
  std::string export_reliability;
  std::string export_joint;
  bool csv = false;
};

inline std::vector<std::string> map_names(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw io::IoError("not a directory: " + dir.string());
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".dbmp") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

inline int cmd_eval_maps(const EvalMapsArgs& a, std::ostream& out) {
  namespace fs = std::filesystem;
  if (a.bins == 0) throw ConfigError("--bins must be at least 1");
  const auto pred_names = map_names(a.pred);
  const auto gt_names = map_names(a.gt);
  for (const auto& n : pred_names) {
    if (!std::binary_search(gt_names.begin(), gt_names.end(), n)) {
      throw io::IoError("no ground truth for " + (fs::path(a.pred) / n).string());
    }
  }
  for (const auto& n : gt_names) {
    if (!std::binary_search(pred_names.begin(), pred_names.end(), n)) {
      throw io::IoError("no prediction for " + (fs::path(a.gt) / n).string());
    }
  }
  if (pred_names.empty()) throw io::IoError("no .dbmp files in " + a.pred);
  std::vector<ProbabilityMap> preds;
  std::vector<LabelMap> gts;
  for (const auto& n : pred_names) {
    const auto pp = fs::path(a.pred) / n;
    const auto gp = fs::path(a.gt) / n;
    auto p = read_map(pp);
    auto g = read_map(gp);
    if (p.dtype != MapDtype::Probability) throw FormatError(pp.string() + ": expected a probability map");
    if (g.dtype != MapDtype::HardLabel) throw FormatError(gp.string() + ": expected a hard label map");
    if (!p.grid.same_shape(g.grid)) throw FormatError(pp.string() + ": shape differs from " + gp.string());
    preds.push_back(std::move(p.grid));
    gts.push_back(std::move(g.grid));
  }
  const Evaluation ev = evaluate_maps(preds, gts, a.bins);
  print_summary(out, ev.summary, a.csv);
  export_extras(ev, a.bins, a.export_reliability, a.export_joint);
  return kOk;
}

struct SweepArgs {
  std::string technique = "hi";
  std::string alphas = "0,0.01,0.02,0.05,0.1,0.2";
  std::string from;
  std::string data;
  std::string out;
  std::optional<double> beta;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::size_t bins = kDefaultBins;
};

inline constexpr const char* kSweepHeader = "alpha,ece,oe,acc,fmax,status";

inline int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const auto alphas = parse_alpha_list(a.alphas);
  TrainArgs base;
  base.mode = "slp";
  base.technique = a.technique;
  base.beta = a.beta;
  base.epochs = a.epochs;
  base.lr = a.lr;
  base.seed = a.seed;
  base.data = a.data;
  train_config_from(base);
  const Checkpoint anchor = load_anchor(a.from);
  const Dataset data = Dataset::from_records(read_dataset(a.data));
  if (a.bins == 0) throw ConfigError("--bins must be at least 1");

  std::ofstream csv(a.out, std::ios::binary | std::ios::trunc);
  if (!csv) throw io::IoError("cannot write " + a.out);
  csv << kSweepHeader << "\n";
  for (double alpha : alphas) {
    std::string row;
    try {
      TrainArgs run = base;
      run.alpha = alpha;
      const Checkpoint ck = train_adaptive(train_config_from(run), data, anchor);
      const auto s = evaluate(ck, data.test, a.bins).summary;
      row = format_real(alpha) + "," + format_real(s.ece_ew) + "," + format_real(s.oe_ew) + "," +
            format_real(s.accuracy) + "," + (s.f_max ? format_real(*s.f_max) : std::string("nan")) + ",ok";
    } catch (const DivergenceError&) {
      row = format_real(alpha) + ",nan,nan,nan,nan,diverged";
    } catch (const ConfigError&) {
      row = format_real(alpha) + ",nan,nan,nan,nan,invalid";
    } catch (const DomainError&) {
      row = format_real(alpha) + ",nan,nan,nan,nan,invalid";
    }
    csv << row << "\n" << std::flush;
    if (!csv) throw io::IoError("short write to " + a.out);
    out << row << "\n";
  }
  return kOk;
}

/// Builds the command tree, runs the selected command and maps failures
/// onto exit codes.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive stochastic label perturbation toolkit", "aslp"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic dataset and manifest");
  g->add_option("--config", gen.config, "key = value generator config");
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a baseline or continue one with label perturbation");
  t->add_option("--mode", tr.mode, "baseline|slp|mei|mc|als");
  t->add_option("--data", tr.data, "Dataset manifest")->required();
  t->add_option("--from", tr.from, "Baseline checkpoint to continue");
  t->add_option("--out", tr.out, "Checkpoint to write")->required();
  t->add_option("--alpha", tr.alpha, "Static perturbation probability (slp)");
  t->add_option("--technique", tr.technique, "hi|si|m|dm|ls");
  t->add_option("--beta", tr.beta, "Perturbation strength");
  t->add_option("--eta", tr.eta, "Adaptive step size");
  t->add_option("--lambda", tr.lambda, "Regulariser weight");
  t->add_option("--epochs", tr.epochs, "Epochs for this phase");
  t->add_option("--lr", tr.lr, "Adam learning rate");
  t->add_option("--seed", tr.seed, "Seed");
  t->add_option("--hidden", tr.hidden, "Hidden channels (baseline)");
  t->add_flag("--csv", tr.csv, "CSV epoch log");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset manifest")->required();
  e->add_option("--split", ev.split, "train|val|test|ood");
  e->add_option("--bins", ev.bins, "Equal-width bin count");
  e->add_option("--export-reliability", ev.export_reliability, "Reliability CSV path");
  e->add_option("--export-joint", ev.export_joint, "Joint confidence/accuracy histogram CSV path");
  e->add_option("--export-maps", ev.export_maps, "Write pred/ and gt/ map files here");
  e->add_option("--temperature", ev.temperature, "Divide logits by T");
  e->add_flag("--fit-temperature", ev.fit_temperature, "Fit T on the validation split");
  e->add_flag("--csv", ev.csv, "CSV output");

  EvalMapsArgs em;
  auto* m = app.add_subcommand("eval-maps", "Evaluate prediction maps against ground-truth maps");
  m->add_option("--pred", em.pred, "Directory of probability maps")->required();
  m->add_option("--gt", em.gt, "Directory of hard label maps")->required();
  m->add_option("--bins", em.bins, "Equal-width bin count");
  m->add_option("--export-reliability", em.export_reliability, "Reliability CSV path");
  m->add_option("--export-joint", em.export_joint, "Joint confidence/accuracy histogram CSV path");
  m->add_flag("--csv", em.csv, "CSV output");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Static perturbation sweep over alpha");
  s->add_option("--technique", sw.technique, "hi|si|m|dm|ls");
  s->add_option("--alphas", sw.alphas, "Comma-separated alpha list");
  s->add_option("--from", sw.from, "Baseline checkpoint");
  s->add_option("--data", sw.data, "Dataset manifest")->required();
  s->add_option("--out", sw.out, "CSV path")->required();
  s->add_option("--beta", sw.beta, "Perturbation strength");
  s->add_option("--epochs", sw.epochs, "Epochs per run");
  s->add_option("--lr", sw.lr, "Adam learning rate");
  s->add_option("--seed", sw.seed, "Seed");
  s->add_option("--bins", sw.bins, "Equal-width bin count");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "aslp: " << ex.what() << "\n";
    return kUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (m->parsed()) return cmd_eval_maps(em, out);
    if (s->parsed()) return cmd_sweep(sw, out);
  } catch (const ConfigError& ex) {
    err << "aslp: config: " << ex.what() << "\n";
    return kUsage;
  } catch (const DomainError& ex) {
    err << "aslp: " << ex.what() << "\n";
    return kUsage;
  } catch (const io::IoError& ex) {
    err << "aslp: io: " << ex.what() << "\n";
    return kIo;
  } catch (const FormatError& ex) {
    err << "aslp: format: " << ex.what() << "\n";
    return kIo;
  } catch (const ProtocolError& ex) {
    err << "aslp: " << ex.what() << "\n";
    return kProtocol;
  } catch (const StateError& ex) {
    err << "aslp: " << ex.what() << "\n";
    return kProtocol;
  } catch (const DivergenceError& ex) {
    err << "aslp: diverged: " << ex.what() << "\n";
    return kNumeric;
  } catch (const ShapeError& ex) {
    err << "aslp: shape: " << ex.what() << "\n";
    return kIo;
  }
  return kUsage;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace aslp::cli
