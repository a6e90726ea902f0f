#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "aslp/errors.hpp"
#include "aslp/files.hpp"
#include "aslp/grid.hpp"
#include "aslp/mapfile.hpp"
#include "aslp/random.hpp"

namespace aslp {

enum class Split { Train, Val, Test, Ood };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Ood: return "ood";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "ood") return Split::Ood;
  return std::nullopt;
}

struct SampleRecord {
  std::uint64_t sample_id = 0;
  Grid image;
  LabelMap label;
  Split split = Split::Train;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct GeneratorConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t train = 400;
  std::size_t val = 100;
  std::size_t test = 200;
  std::size_t ood = 100;
  std::size_t blobs_min = 1;
  std::size_t blobs_max = 3;
  /// Pulls both class intensity means toward 0.5; 0 keeps 0.7 / 0.3, 1 merges them.
  double overlap = 0.4;
  double foreground_mean = 0.7;
  double background_mean = 0.3;
  /// Spread of the per-region intensity draw (one value per blob, one for the background).
  double intensity_sigma = 0.10;
  /// Per-pixel noise added on top of the region intensity.
  double pixel_sigma = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (height == 0 || width == 0) throw ConfigError("image size must be positive");
    if (train == 0 || val == 0 || test == 0 || ood == 0) throw ConfigError("split counts must be at least 1");
    if (blobs_min == 0 || blobs_min > blobs_max) throw ConfigError("blob count range must satisfy 1 <= min <= max");
    if (!(overlap >= 0.0 && overlap <= 1.0)) throw ConfigError("overlap must lie in [0,1]");
    if (!(intensity_sigma >= 0.0)) throw ConfigError("intensity sigma must be non-negative");
    if (!(pixel_sigma >= 0.0)) throw ConfigError("pixel sigma must be non-negative");
  }

  double fg_mean() const { return foreground_mean + overlap * (0.5 - foreground_mean); }
  double bg_mean() const { return background_mean + overlap * (0.5 - background_mean); }
};

namespace detail {

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline SampleRecord blob_sample(const GeneratorConfig& cfg, std::uint64_t id, Split split) {
  RandomSource rng(cfg.seed, id, 0);
  const auto h = static_cast<double>(cfg.height);
  const auto w = static_cast<double>(cfg.width);
  const double extent = std::min(h, w);
  LabelMap label(cfg.height, cfg.width, 0.0);
  std::vector<int> owner(cfg.height * cfg.width, -1);
  const std::size_t blobs = cfg.blobs_min + rng.below(cfg.blobs_max - cfg.blobs_min + 1);
  for (std::size_t b = 0; b < blobs; ++b) {
    const double cy = h * (0.15 + 0.7 * rng.uniform());
    const double cx = w * (0.15 + 0.7 * rng.uniform());
    const double ry = extent * (0.08 + 0.17 * rng.uniform());
    const double rx = extent * (0.08 + 0.17 * rng.uniform());
    const double theta = std::numbers::pi * rng.uniform();
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t r = 0; r < cfg.height; ++r) {
      for (std::size_t c = 0; c < cfg.width; ++c) {
        const double dy = static_cast<double>(r) + 0.5 - cy;
        const double dx = static_cast<double>(c) + 0.5 - cx;
        const double u = (dx * ct + dy * st) / rx;
        const double v = (-dx * st + dy * ct) / ry;
        if (u * u + v * v <= 1.0) {
          label(r, c) = 1.0;
          owner[r * cfg.width + c] = static_cast<int>(b);
        }
      }
    }
  }
  // One intensity per blob and one for the background, then pixel noise.
  std::vector<double> blob_level(blobs);
  for (auto& v : blob_level) v = rng.normal(cfg.fg_mean(), cfg.intensity_sigma);
  const double bg_level = rng.normal(cfg.bg_mean(), cfg.intensity_sigma);
  Grid image(cfg.height, cfg.width);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double level = owner[i] >= 0 ? blob_level[static_cast<std::size_t>(owner[i])] : bg_level;
    image[i] = to_f32(std::clamp(level + rng.normal(0.0, cfg.pixel_sigma), 0.0, 1.0));
  }
  return {id, std::move(image), std::move(label), split};
}

inline SampleRecord texture_sample(const GeneratorConfig& cfg, std::uint64_t id) {
  RandomSource rng(cfg.seed, id, 0);
  struct Grating {
    double fy, fx, phase, amplitude;
  };
  std::vector<Grating> gratings;
  for (int g = 0; g < 3; ++g) {
    const double cycles = 1.0 + 5.0 * rng.uniform();
    const double angle = std::numbers::pi * rng.uniform();
    gratings.push_back({cycles * std::sin(angle) / static_cast<double>(cfg.height),
                        cycles * std::cos(angle) / static_cast<double>(cfg.width),
                        2.0 * std::numbers::pi * rng.uniform(), 0.5 + 0.5 * rng.uniform()});
  }
  Grid raw(cfg.height, cfg.width);
  for (std::size_t r = 0; r < cfg.height; ++r) {
    for (std::size_t c = 0; c < cfg.width; ++c) {
      double v = 0.0;
      for (const auto& g : gratings) {
        v += g.amplitude *
             std::sin(2.0 * std::numbers::pi * (g.fy * static_cast<double>(r) + g.fx * static_cast<double>(c)) +
                      g.phase);
      }
      raw(r, c) = v + rng.normal(0.0, 0.25);
    }
  }
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double span = *hi - *lo;
  Grid image(cfg.height, cfg.width);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    image[i] = to_f32(span > 0.0 ? (raw[i] - *lo) / span : 0.5);
  }
  return {id, std::move(image), LabelMap(cfg.height, cfg.width, 0.0), Split::Ood};
}

}  // namespace detail

/// Blob images for the train, val and test splits, with ids 0..train+val+test-1
/// in that order. Image values are f32-representable so that a map-file
/// round trip is exact.
inline std::vector<SampleRecord> generate_in_distribution(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<SampleRecord> out;
  std::uint64_t id = 0;
  for (auto [split, n] : {std::pair{Split::Train, cfg.train}, {Split::Val, cfg.val}, {Split::Test, cfg.test}}) {
    for (std::size_t k = 0; k < n; ++k) out.push_back(detail::blob_sample(cfg, id++, split));
  }
  return out;
}

/// Foreground-free grating textures; ids follow the in-distribution ids.
inline std::vector<SampleRecord> generate_ood(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<SampleRecord> out;
  std::uint64_t id = cfg.train + cfg.val + cfg.test;
  for (std::size_t k = 0; k < cfg.ood; ++k) out.push_back(detail::texture_sample(cfg, id++));
  return out;
}

inline std::vector<SampleRecord> generate_dataset(const GeneratorConfig& cfg) {
  auto out = generate_in_distribution(cfg);
  auto ood = generate_ood(cfg);
  out.insert(out.end(), std::make_move_iterator(ood.begin()), std::make_move_iterator(ood.end()));
  return out;
}

inline std::vector<SampleRecord> select_split(const std::vector<SampleRecord>& records, Split split) {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

inline std::map<Split, std::size_t> split_counts(const std::vector<SampleRecord>& records) {
  std::map<Split, std::size_t> counts{{Split::Train, 0}, {Split::Val, 0}, {Split::Test, 0}, {Split::Ood, 0}};
  for (const auto& r : records) ++counts[r.split];
  return counts;
}

/// Accuracy of thresholding raw intensity at the midpoint of the two class
/// means (the equal-prior Bayes threshold for two equal-variance Gaussians).
inline double intensity_threshold_accuracy(const std::vector<SampleRecord>& records, const GeneratorConfig& cfg) {
  const double t = 0.5 * (cfg.fg_mean() + cfg.bg_mean());
  std::size_t correct = 0, total = 0;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.image.size(); ++i) {
      correct += (r.image[i] > t) == (r.label[i] > 0.5) ? 1 : 0;
    }
    total += r.image.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

inline constexpr const char* kManifestName = "manifest.tsv";

/// Writes images (f32 maps) and labels (u8 maps) plus a tab-separated
/// manifest `<sample_id>\t<split>\t<image_file>\t<label_file>` with paths
/// relative to the manifest. Returns the manifest path.
inline std::filesystem::path write_dataset(const std::vector<SampleRecord>& records,
                                           const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "labels", ec);
  if (ec) throw io::IoError("cannot create " + dir.string() + ": " + ec.message());
  std::string manifest = "# sample_id\tsplit\timage_file\tlabel_file\n";
  for (const auto& r : records) {
    const std::string stem = std::to_string(r.sample_id) + ".dbmp";
    const std::string image_rel = "images/" + stem;
    const std::string label_rel = "labels/" + stem;
    write_map(dir / image_rel, r.image, MapDtype::Probability);
    write_map(dir / label_rel, r.label, MapDtype::HardLabel);
    manifest += std::to_string(r.sample_id) + "\t" + std::string(to_string(r.split)) + "\t" + image_rel + "\t" +
                label_rel + "\n";
  }
  const auto path = dir / kManifestName;
  io::write_text(path, manifest);
  return path;
}

inline std::vector<SampleRecord> read_dataset(const std::filesystem::path& manifest_path) {
  const std::string text = io::read_text(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<SampleRecord> out;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) fail("expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    SampleRecord rec;
    const auto& id = fields[0];
    const auto [ptr, ec] = std::from_chars(id.data(), id.data() + id.size(), rec.sample_id);
    if (ec != std::errc{} || ptr != id.data() + id.size()) fail("bad sample id '" + id + "'");
    const auto split = parse_split(fields[1]);
    if (!split) fail("unknown split '" + fields[1] + "'");
    rec.split = *split;
    auto image = read_map(base / fields[2]);
    auto label = read_map(base / fields[3]);
    if (image.dtype != MapDtype::Probability) fail("image file " + fields[2] + " is not a probability map");
    if (label.dtype != MapDtype::HardLabel) fail("label file " + fields[3] + " is not a hard label map");
    if (!image.grid.same_shape(label.grid)) fail("image and label shapes differ");
    rec.image = std::move(image.grid);
    rec.label = std::move(label.grid);
    out.push_back(std::move(rec));
  }
  std::set<std::uint64_t> seen;
  for (const auto& r : out) {
    if (!seen.insert(r.sample_id).second) {
      throw FormatError(manifest_path.string() + ": duplicate sample id " + std::to_string(r.sample_id));
    }
  }
  return out;
}

}  // namespace aslp
