// Acceptance runner: one PASS/FAIL line per criterion.
//
//   aslp_acceptance --work DIR [--allow-fail 6,7]
//
// Criteria listed in --allow-fail still print their verdict but do not
// change the exit status.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aslp/aslp.hpp"
#include "aslp/cli.hpp"
#include "oracle.hpp"

using namespace aslp;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Verdict {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
    pass = pass && ok;
  }
};

// Runs the command-line front end, failing loudly on a non-zero exit.
std::string cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) {
    std::string joined;
    for (const auto& a : args) joined += " " + a;
    throw std::runtime_error("aslp" + joined + " exited " + std::to_string(code) + ": " + err.str());
  }
  return out.str();
}

std::map<std::string, double> summary_csv(const std::string& text) {
  std::map<std::string, double> m;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma != std::string::npos) m[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  return m;
}

LabelMap random_hard(std::size_t h, std::size_t w, std::mt19937_64& g) {
  std::bernoulli_distribution coin(0.5);
  LabelMap y(h, w);
  for (double& v : y.values()) v = coin(g) ? 1.0 : 0.0;
  return y;
}

ProbabilityMap random_prob(std::size_t h, std::size_t w, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0.001, 0.999);
  ProbabilityMap p(h, w);
  for (double& v : p.values()) v = u(g);
  return p;
}

// --- 1 -----------------------------------------------------------------
Verdict analytic_identities() {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> beta_d(0.01, 2.0), alpha_d(0.0, 1.0);
  const auto t0 = Clock::now();
  double worst_factored = 0, worst_smoothing = 0, worst_inversion = 0;
  for (int k = 0; k < 1000; ++k) {
    const auto pred = random_prob(8, 8, g);
    const auto y = random_hard(8, 8, g);
    const double beta = beta_d(g);
    const bool z = (k % 2) == 1;
    worst_factored = std::max(worst_factored, std::abs(sc_bce_sampled(pred, y, z, PerturbationSpec::make(
                                                                                         Technique::HardInversion, beta)) -
                                                       sc_bce_factored(pred, y, z, beta)));
    const double alpha = alpha_d(g) * std::min(1.0, 1.0 / beta);
    const double mixed = (1 - alpha) * bce(pred, y) + alpha * bce(pred, perturb_label(y, beta));
    worst_smoothing = std::max(worst_smoothing, std::abs(mixed - smoothed_bce(pred, y, alpha * beta)));
    worst_inversion =
        std::max(worst_inversion, std::abs(bce(pred, perturb_label(y, 2.0)) + bce(pred, y) - 2 * bce_uniform(pred)));
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.check(worst_factored <= 1e-9, "sampled vs factored " + fmt("%.2e", worst_factored));
  v.check(worst_smoothing <= 1e-9, "mixture vs smoothing " + fmt("%.2e", worst_smoothing));
  v.check(worst_inversion <= 1e-9, "inversion sum " + fmt("%.2e", worst_inversion));
  v.check(secs < 5.0, fmt("%.3fs", secs));
  return v;
}

// --- 2 -----------------------------------------------------------------
Verdict gradient_invariance() {
  std::mt19937_64 g(2);
  const auto t0 = Clock::now();
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const auto pred = random_prob(8, 8, g);
    const auto y = random_hard(8, 8, g);
    const double ly = bce(pred, y);
    const double expected = 2 * (bce_uniform(pred) - ly);
    for (double beta : {0.5, 0.75, 1.0, 1.5, 2.0}) {
      worst = std::max(worst, std::abs(grad_alpha(ly, bce(pred, perturb_label(y, beta)), beta) - expected));
    }
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.check(worst <= 1e-9, "max deviation " + fmt("%.2e", worst));
  v.check(secs < 1.0, fmt("%.3fs", secs));
  return v;
}

// --- 3 -----------------------------------------------------------------
std::vector<ConfidenceRecord> make_records(std::initializer_list<std::pair<double, bool>> items) {
  std::vector<ConfidenceRecord> out;
  for (const auto& [c, ok] : items) out.push_back({c, ok});
  return out;
}

Verdict metric_oracles() {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0.5, 1.0), coin(0.0, 1.0);
  const auto t0 = Clock::now();
  double worst = 0;
  bool sweep_bins_agree = true;
  for (double skew : {0.0, 0.1}) {
    std::vector<ConfidenceRecord> r(10000);
    for (auto& rec : r) {
      rec.confidence = u(g);
      rec.correct = coin(g) < rec.confidence - skew;
    }
    for (std::size_t B : {10u, 15u}) {
      const auto ew = bin_equal_width(r, B);
      const auto ew_o = oracle::equal_width(r, B);
      const auto em = bin_equal_mass(r, B);
      const auto em_o = oracle::equal_mass(r, B);
      for (double d : {ece(ew) - oracle::ece(ew_o, r.size()), oe(ew) - oracle::oe(ew_o, r.size()),
                       ece(em) - oracle::ece(em_o, r.size()), oe(em) - oracle::oe(em_o, r.size()),
                       ece_debias(ew) - oracle::debias(ew_o)}) {
        worst = std::max(worst, std::abs(d));
      }
    }
    const auto s = ece_sweep(r);
    const auto [value, bins] = oracle::sweep(r, kSweepMaxBins);
    sweep_bins_agree = sweep_bins_agree && s.bins == bins;
    worst = std::max(worst, std::abs(s.value - value));
  }
  const auto hand = bin_equal_width(make_records({{0.95, true}, {0.65, false}, {0.85, true}, {0.55, true}}), 10);
  const auto sw = ece_sweep(make_records({{0.6, false}, {0.7, true}, {0.8, true}, {0.9, true}}));
  const double secs = seconds_since(t0);
  Verdict v;
  v.check(worst <= 1e-12, "max oracle deviation " + fmt("%.2e", worst));
  v.check(sweep_bins_agree, "sweep bin counts agree");
  v.check(std::abs(ece(hand) - 0.325) <= 1e-12, "hand ECE " + fmt("%.17g", ece(hand)));
  // Only the 0.6-0.7 bin is over-confident; the 0.9-1.0 bin has C = 0.95 < A = 1.
  v.check(std::abs(oe(hand) - 0.1625) <= 1e-12, "hand OE " + fmt("%.17g", oe(hand)));
  v.check(sw.bins == 4 && std::abs(sw.value - 0.3) <= 1e-12,
          "sweep b*=" + std::to_string(sw.bins) + " value " + fmt("%.17g", sw.value));
  v.check(secs < 5.0, fmt("%.3fs", secs));
  return v;
}

// --- 4 -----------------------------------------------------------------
Verdict gradient_check() {
  std::mt19937_64 g(4);
  std::normal_distribution<double> n(0.0, 0.1);
  const double step = 1e-4;
  const auto t0 = Clock::now();
  double worst = 0;
  std::size_t checked = 0;
  for (int trial = 0; trial < 3; ++trial) {
    auto params = init_params(kDefaultHidden, 40 + static_cast<std::uint64_t>(trial));
    for (double& b : params.conv1_b()) b = n(g);
    for (double& b : params.conv2_b()) b = n(g);
    params.head_b() = n(g);
    const auto image = random_prob(8, 8, g);
    const auto target = random_hard(8, 8, g);
    const auto grads = backward(params, forward(params, image), target);
    auto loss_at = [&](const SegmenterParams& p) { return bce(forward(p, image).probabilities, target); };
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto plus = params, minus = params;
      plus.values()[i] += step;
      minus.values()[i] -= step;
      const double fd = (loss_at(plus) - loss_at(minus)) / (2 * step);
      const double a = grads.values()[i];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8}));
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.check(worst <= 1e-4, std::to_string(checked) + " parameters, worst relative " + fmt("%.2e", worst));
  v.check(secs < 30.0, fmt("%.3fs", secs));
  return v;
}

// --- 5 -----------------------------------------------------------------
Verdict confidence_anchor() {
  const double c = expected_confidence(0.05, 2.0);
  Verdict v;
  v.check(c == 0.95, "expected_confidence(0.05, 2) = " + fmt("%.17g", c));
  return v;
}

// --- 6 to 10: full pipeline through the command-line front end ----------
struct Pipeline {
  fs::path work;
  std::string manifest;
  std::string base_ck, mc_ck, mei_ck;
  std::map<std::string, double> base_test, base_ood, mc_test, mc_ood, mei_test, mei_ood;
  double ideal = 0;
  double base_secs = 0, mc_secs = 0, mei_secs = 0, eval_secs = 0;

  std::map<std::string, double> eval(const std::string& ck, const std::string& split) const {
    return summary_csv(cli_run({"eval", "--ckpt", ck, "--data", manifest, "--split", split, "--csv"}));
  }

  void build() {
    fs::create_directories(work);
    cli_run({"generate", "--out", (work / "data").string()});
    manifest = (work / "data" / "manifest.tsv").string();
    base_ck = (work / "baseline.ck").string();
    mc_ck = (work / "mc.ck").string();
    mei_ck = (work / "mei.ck").string();

    auto t0 = Clock::now();
    cli_run({"train", "--mode", "baseline", "--data", manifest, "--out", base_ck});
    base_secs = seconds_since(t0);
    t0 = Clock::now();
    cli_run({"train", "--mode", "mc", "--technique", "hi", "--data", manifest, "--from", base_ck, "--out", mc_ck});
    mc_secs = seconds_since(t0);
    t0 = Clock::now();
    cli_run({"train", "--mode", "mei", "--technique", "hi", "--data", manifest, "--from", base_ck, "--out", mei_ck});
    mei_secs = seconds_since(t0);

    t0 = Clock::now();
    base_test = eval(base_ck, "test");
    base_ood = eval(base_ck, "ood");
    mc_test = eval(mc_ck, "test");
    mc_ood = eval(mc_ck, "ood");
    mei_test = eval(mei_ck, "test");
    mei_ood = eval(mei_ck, "ood");
    eval_secs = seconds_since(t0);
    ideal = load_checkpoint(base_ck).ideal_accuracy.value_or(std::nan(""));
  }
};

Verdict calibration_reproduction(const Pipeline& p) {
  const double b_oe = p.base_test.at("oe_ew"), b_ece = p.base_test.at("ece_ew");
  const double mc_ece = p.mc_test.at("ece_ew");
  const double dacc = std::abs(p.mc_test.at("accuracy") - p.base_test.at("accuracy"));
  Verdict v;
  v.check(b_oe > 0.01, "baseline OE " + fmt("%.4f", b_oe) + " > 0.01");
  v.check(mc_ece <= 0.7 * b_ece, "MC ECE " + fmt("%.4f", mc_ece) + " <= 0.7 x baseline " + fmt("%.4f", b_ece));
  v.check(dacc <= 0.005, "accuracy gap " + fmt("%.4f", dacc) + " <= 0.005");
  v.check(p.base_secs + p.mc_secs < 300.0, fmt("%.1fs", p.base_secs + p.mc_secs));
  return v;
}

Verdict mei_underconfidence(const Pipeline& p) {
  const double oe_v = p.mei_test.at("oe_ew");
  const double dacc = std::abs(p.mei_test.at("accuracy") - p.ideal);
  Verdict v;
  v.check(oe_v < 0.005, "MEI OE " + fmt("%.4f", oe_v) + " < 0.005");
  v.check(dacc <= 0.01, "MEI accuracy " + fmt("%.4f", p.mei_test.at("accuracy")) + " vs ideal " +
                            fmt("%.4f", p.ideal) + " gap " + fmt("%.4f", dacc) + " <= 0.01");
  v.check(p.mei_test.at("ece_ew") > p.mc_test.at("ece_ew"),
          "MEI ECE " + fmt("%.4f", p.mei_test.at("ece_ew")) + " > MC ECE " + fmt("%.4f", p.mc_test.at("ece_ew")));
  v.check(p.mei_secs < 300.0, fmt("%.1fs", p.mei_secs));
  return v;
}

Verdict ood_direction(const Pipeline& p) {
  const double b = p.base_ood.at("ece_ew"), mc = p.mc_ood.at("ece_ew"), mei = p.mei_ood.at("ece_ew");
  Verdict v;
  v.check(mc < b, "MC OoD ECE " + fmt("%.4f", mc) + " < baseline " + fmt("%.4f", b));
  v.check(mei < b, "MEI OoD ECE " + fmt("%.4f", mei) + " < baseline");
  v.check(mei <= mc, "MEI <= MC");
  v.check(p.eval_secs < 60.0, fmt("%.1fs", p.eval_secs));
  return v;
}

// One empty-bin granularity step for OE at B = 10: a bin holding a small
// share of pixels entering or leaving the over-confident side. Pinned at
// 0.005, half the over-confidence threshold used above.
constexpr double kOeGranularity = 0.005;

struct SweepRow {
  double alpha, ece, oe;
  std::string status;
};

std::vector<SweepRow> read_sweep(const fs::path& path) {
  std::vector<SweepRow> rows;
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw std::runtime_error("malformed sweep row: " + line);
    rows.push_back({std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), f[5]});
  }
  return rows;
}

Verdict sweep_shape(const Pipeline& p) {
  const auto t0 = Clock::now();
  const auto out = p.work / "sweep.csv";
  cli_run({"sweep", "--technique", "hi", "--alphas", "0,0.01,0.02,0.05,0.1,0.2", "--from", p.base_ck, "--data",
           p.manifest, "--out", out.string()});
  const double secs = seconds_since(t0);
  const auto rows = read_sweep(out);
  Verdict v;
  bool all_ok = rows.size() == 6;
  for (const auto& r : rows) all_ok = all_ok && r.status == "ok";
  v.check(all_ok, std::to_string(rows.size()) + " rows ok");
  if (!all_ok) return v;
  bool monotone = true;
  std::string oes, eces;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) monotone = monotone && rows[i].oe <= rows[i - 1].oe + kOeGranularity;
    oes += (i ? "/" : "") + fmt("%.4f", rows[i].oe);
    eces += (i ? "/" : "") + fmt("%.4f", rows[i].ece);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].ece < rows[best].ece) best = i;
  }
  v.check(monotone, "OE " + oes + " non-increasing within " + fmt("%g", kOeGranularity));
  v.check(best > 0 && best + 1 < rows.size() && rows.back().ece > rows[best].ece,
          "ECE " + eces + " minimum at alpha " + fmt("%g", rows[best].alpha));
  v.check(secs < 900.0, fmt("%.1fs", secs));
  return v;
}

Verdict determinism(const Pipeline& p) {
  const auto dir = p.work / "repeat";
  fs::create_directories(dir);
  Verdict v;
  // Data generation.
  cli_run({"generate", "--out", (dir / "data").string()});
  bool same_data = true;
  for (const auto& e : fs::recursive_directory_iterator(p.work / "data")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), p.work / "data");
    same_data = same_data && io::read_file(e.path()) == io::read_file(dir / "data" / rel);
  }
  v.check(same_data, "generate");
  // Training: a short baseline and continuations of every adaptive mode.
  bool same_ck = true;
  for (int k = 0; k < 2; ++k) {
    const auto tag = std::to_string(k);
    cli_run({"train", "--mode", "baseline", "--epochs", "2", "--data", p.manifest, "--out",
             (dir / ("b" + tag + ".ck")).string()});
    for (const std::string mode : {"mc", "mei", "als"}) {
      cli_run({"train", "--mode", mode, "--epochs", "2", "--data", p.manifest, "--from", p.base_ck, "--out",
               (dir / (mode + tag + ".ck")).string()});
    }
  }
  for (const std::string name : {"b", "mc", "mei", "als"}) {
    same_ck = same_ck && io::read_file(dir / (name + "0.ck")) == io::read_file(dir / (name + "1.ck"));
  }
  v.check(same_ck, "train checkpoints");
  // Evaluation output and exports.
  bool same_eval = true;
  for (int k = 0; k < 2; ++k) {
    const auto tag = std::to_string(k);
    io::write_text(dir / ("eval" + tag + ".csv"),
                   cli_run({"eval", "--ckpt", p.mc_ck, "--data", p.manifest, "--csv", "--export-reliability",
                            (dir / ("rel" + tag + ".csv")).string(), "--export-joint",
                            (dir / ("joint" + tag + ".csv")).string()}));
  }
  for (const std::string name : {"eval", "rel", "joint"}) {
    same_eval = same_eval && io::read_file(dir / (name + "0.csv")) == io::read_file(dir / (name + "1.csv"));
  }
  v.check(same_eval, "eval CSVs");
  // Sweep.
  for (int k = 0; k < 2; ++k) {
    cli_run({"sweep", "--alphas", "0,0.05", "--epochs", "2", "--from", p.base_ck, "--data", p.manifest, "--out",
             (dir / ("sweep" + std::to_string(k) + ".csv")).string()});
  }
  v.check(io::read_file(dir / "sweep0.csv") == io::read_file(dir / "sweep1.csv"), "sweep CSV");
  return v;
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  for (std::string cell; std::getline(ss, cell, ',');) {
    if (!cell.empty()) out.insert(std::stoi(cell));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "aslp_acceptance";
  std::set<int> allowed;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--allow-fail" && i + 1 < argc) {
      allowed = parse_list(argv[++i]);
    } else {
      std::cerr << "usage: aslp_acceptance [--work DIR] [--allow-fail N,M]\n";
      return 2;
    }
  }

  int hard_failures = 0;
  auto report = [&](int id, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("error: ") + e.what();
    }
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail
              << (!v.pass && allowed.count(id) ? "  (allowed)" : "") << std::endl;
    if (!v.pass && !allowed.count(id)) ++hard_failures;
  };

  report(1, analytic_identities);
  report(2, gradient_invariance);
  report(3, metric_oracles);
  report(4, gradient_check);
  report(5, confidence_anchor);

  Pipeline p;
  p.work = work;
  std::string pipeline_error;
  try {
    fs::remove_all(work);
    p.build();
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  auto guarded = [&](Verdict (*fn)(const Pipeline&)) {
    return [&, fn]() -> Verdict {
      if (!pipeline_error.empty()) throw std::runtime_error("pipeline: " + pipeline_error);
      return fn(p);
    };
  };
  report(6, guarded(calibration_reproduction));
  report(7, guarded(mei_underconfidence));
  report(8, guarded(ood_direction));
  report(9, guarded(sweep_shape));
  report(10, guarded(determinism));
  return hard_failures == 0 ? 0 : 1;
}
