#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "atsc/log.hpp"
#include "atsc/rng.hpp"
#include "atsc/tensor.hpp"

namespace atsc {

struct DatasetSpec {
  enum class Kind { synthetic, image_folder };

  Kind kind = Kind::synthetic;
  std::size_t num_classes = 10;
  std::uint64_t seed = 0;

  // synthetic
  std::size_t dims = 32;
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  double separation = 3.0;  // cluster-centre radius in units of `noise`
  double noise = 1.0;
  std::size_t modes_per_class = 1;  // >1: each class is a union of Gaussian clusters

  // image_folder
  std::string path;
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 3;
  bool augment = true;
  bool flip = true;
  std::size_t pad = 4;

  void validate() const {
    if (kind == Kind::synthetic) {
      if (num_classes < 2) throw ConfigError("dataset.num_classes must be >= 2");
      if (dims < 1) throw ConfigError("dataset.dims must be >= 1");
      if (train_size < num_classes || test_size < 1)
        throw ConfigError("dataset.train_size must cover every class and dataset.test_size must be >= 1");
      if (!(noise > 0.0) || !(separation >= 0.0)) throw ConfigError("dataset.noise must be > 0, separation >= 0");
      if (modes_per_class < 1) throw ConfigError("dataset.modes_per_class must be >= 1");
    } else {
      if (path.empty()) throw ConfigError("dataset.path is required for image_folder datasets");
      if (image_h == 0 || image_w == 0 || channels == 0) throw ConfigError("dataset image dims must be positive");
    }
  }

  /// Per-sample input shape (H, W, C) fed to encoders.
  std::array<std::size_t, 3> input_shape() const {
    if (kind == Kind::synthetic) return {1, 1, dims};
    return {image_h, image_w, channels};
  }
};

/// Labelled samples, x shaped (N, H, W, C).
template <class S>
struct Split {
  Tensor<S> x;
  std::vector<int> y;

  std::size_t size() const noexcept { return y.size(); }
};

template <class S>
struct Batch {
  Tensor<S> x;
  std::vector<int> y;

  std::size_t size() const noexcept { return y.size(); }
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Isotropic Gaussian clusters, `modes_per_class` per class (K clusters by default). Centres are
/// random directions scaled to `separation * noise`; labels are assigned round-robin so class
/// counts differ by at most one, and samples of a class cycle through its clusters.
template <class S = double>
std::pair<Split<S>, Split<S>> make_synthetic(const DatasetSpec& spec) {
  if (spec.kind != DatasetSpec::Kind::synthetic) throw ConfigError("make_synthetic: spec is not synthetic");
  spec.validate();
  const std::size_t k = spec.num_classes, d = spec.dims, modes = spec.modes_per_class;
  const std::size_t clusters = k * modes;

  auto center_rng = make_engine(spec.seed, "synthetic.centers");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> centers(clusters * d);
  for (std::size_t c = 0; c < clusters; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      centers[c * d + j] = gauss(center_rng);
      norm += centers[c * d + j] * centers[c * d + j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) centers[c * d + j] *= spec.separation * spec.noise / norm;
  }

  auto draw = [&](std::size_t n, std::string_view tag) {
    auto rng = make_engine(spec.seed, tag);
    Split<S> s;
    s.x = Tensor<S>({n, 1, 1, d});
    s.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t label = i % k;
      const std::size_t c = label + k * ((i / k) % modes);
      s.y[i] = static_cast<int>(label);
      for (std::size_t j = 0; j < d; ++j)
        s.x[i * d + j] = static_cast<S>(centers[c * d + j] + spec.noise * gauss(rng));
    }
    return s;
  };
  return {draw(spec.train_size, "synthetic.train"), draw(spec.test_size, "synthetic.test")};
}

/// Deterministic shuffle keyed by (seed, epoch); the final short batch is kept.
inline std::vector<std::vector<std::size_t>> iterate_batches(std::size_t n, std::size_t batch_size,
                                                             std::uint64_t seed, int epoch) {
  if (batch_size == 0) throw ContractViolation("iterate_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_engine(seed, "batches", {static_cast<std::uint64_t>(epoch)});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

// ---------------------------------------------------------------------------------------------
// Image preprocessing. Images are single-sample tensors shaped (1, H, W, C).

/// Zero-pads `pad` pixels on every side.
template <class S>
Tensor<S> pad_image(const Tensor<S>& img, std::size_t pad) {
  require_feature_map(img.shape, "pad_image");
  const std::size_t h = img.dim(1), w = img.dim(2), c = img.dim(3);
  Tensor<S> out({1, h + 2 * pad, w + 2 * pad, c});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < c; ++k) out.at(0, i + pad, j + pad, k) = img.at(0, i, j, k);
  return out;
}

template <class S>
Tensor<S> normalize_image(Tensor<S> img, const ChannelStats& stats) {
  const std::size_t c = img.dim(3);
  if (stats.mean.size() != c || stats.stddev.size() != c)
    throw IngestionError("normalization stats cover " + std::to_string(stats.mean.size()) + " channels, image has " +
                         std::to_string(c));
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::size_t ch = i % c;
    const double sd = stats.stddev[ch] > 0.0 ? stats.stddev[ch] : 1.0;
    img[i] = static_cast<S>((img[i] - stats.mean[ch]) / sd);
  }
  return img;
}

/// Training transform with explicit randomness: pad, crop at (oy, ox) within the padded image,
/// optional horizontal flip, then per-channel normalization.
template <class S>
Tensor<S> preprocess_image_at(const Tensor<S>& img, const ChannelStats& stats, std::size_t pad, std::size_t oy,
                              std::size_t ox, bool flip) {
  const std::size_t h = img.dim(1), w = img.dim(2), c = img.dim(3);
  if (oy > 2 * pad || ox > 2 * pad) throw ContractViolation("crop offset outside padded image");
  const auto padded = pad_image(img, pad);
  Tensor<S> out({1, h, w, c});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t sj = flip ? (w - 1 - j) : j;
      for (std::size_t k = 0; k < c; ++k) out.at(0, i, j, k) = padded.at(0, oy + i, ox + sj, k);
    }
  return normalize_image(std::move(out), stats);
}

struct AugmentOptions {
  std::size_t pad = 4;
  bool flip = true;
};

template <class S>
Tensor<S> preprocess_image(const Tensor<S>& img, const ChannelStats& stats, bool train, std::size_t expect_h,
                           std::size_t expect_w, const AugmentOptions& aug, Engine& rng) {
  if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != expect_h || img.dim(2) != expect_w)
    throw IngestionError("image shape " + shape_str(img.shape) + " does not match configured " +
                         std::to_string(expect_h) + "x" + std::to_string(expect_w));
  if (!train) return normalize_image(img, stats);
  std::uniform_int_distribution<std::size_t> off(0, 2 * aug.pad);
  const std::size_t oy = off(rng), ox = off(rng);
  const bool flip = aug.flip && std::bernoulli_distribution(0.5)(rng);
  return preprocess_image_at(img, stats, aug.pad, oy, ox, flip);
}

// ---------------------------------------------------------------------------------------------
// PNM ingestion (P2/P3/P5/P6), values scaled to [0, 1].

inline Tensor<double> read_pnm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open image " + file.string());
  std::string magic;
  in >> magic;
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
    throw IngestionError(file.string() + ": unsupported image format (expected PGM/PPM)");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
    long v = -1;
    in >> v;
    if (!in || v < 0) throw IngestionError(file.string() + ": malformed header");
    return static_cast<std::size_t>(v);
  };
  const std::size_t w = next_int(), h = next_int(), maxval = next_int();
  if (maxval == 0 || maxval > 255) throw IngestionError(file.string() + ": only 8-bit images are supported");
  const std::size_t c = (magic == "P3" || magic == "P6") ? 3 : 1;
  Tensor<double> img({1, h, w, c});
  if (magic == "P5" || magic == "P6") {
    in.get();
    std::vector<unsigned char> raw(img.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IngestionError(file.string() + ": truncated data");
    for (std::size_t i = 0; i < raw.size(); ++i) img[i] = raw[i] / static_cast<double>(maxval);
  } else {
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(next_int()) / static_cast<double>(maxval);
  }
  return img;
}

inline std::filesystem::path resolve_data_path(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_relative())
    if (const char* root = std::getenv("ATSC_DATA_DIR"); root && *root) return std::filesystem::path(root) / p;
  return p;
}

inline ChannelStats compute_channel_stats(const Tensor<double>& x) {
  const std::size_t c = x.dim(3);
  ChannelStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const std::size_t m = x.size() / c;
  for (std::size_t i = 0; i < x.size(); ++i) s.mean[i % c] += x[i];
  for (auto& v : s.mean) v /= static_cast<double>(m);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - s.mean[i % c];
    s.stddev[i % c] += d * d;
  }
  for (auto& v : s.stddev) v = std::sqrt(v / static_cast<double>(m));
  return s;
}

/// A loaded dataset plus everything needed to materialize batches.
template <class S>
struct Dataset {
  DatasetSpec spec;
  Split<S> train;
  Split<S> test;
  std::optional<ChannelStats> stats;  // image datasets only

  bool is_image() const { return spec.kind == DatasetSpec::Kind::image_folder; }

  /// Gathers `indices` from `split`; image datasets are preprocessed (augmented when `augment`),
  /// with randomness drawn from (seed, epoch, batch_index).
  Batch<S> batch(const Split<S>& split, const std::vector<std::size_t>& indices, bool augment, std::uint64_t seed,
                 int epoch, std::size_t batch_index) const {
    const auto& sh = split.x.shape;
    const std::size_t per = sh[1] * sh[2] * sh[3];
    Batch<S> b;
    b.x = Tensor<S>({indices.size(), sh[1], sh[2], sh[3]});
    b.y.reserve(indices.size());
    auto rng = make_engine(seed, "augment", {static_cast<std::uint64_t>(epoch), batch_index});
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const std::size_t i = indices[r];
      b.y.push_back(split.y.at(i));
      auto first = split.x.data.begin() + static_cast<std::ptrdiff_t>(i * per);
      if (!is_image()) {
        std::copy(first, first + static_cast<std::ptrdiff_t>(per), b.x.data.begin() + static_cast<std::ptrdiff_t>(r * per));
        continue;
      }
      Tensor<S> img({1, sh[1], sh[2], sh[3]}, std::vector<S>(first, first + static_cast<std::ptrdiff_t>(per)));
      const auto out = preprocess_image(img, *stats, augment && spec.augment, spec.image_h, spec.image_w,
                                        AugmentOptions{spec.pad, spec.flip}, rng);
      std::copy(out.data.begin(), out.data.end(), b.x.data.begin() + static_cast<std::ptrdiff_t>(r * per));
    }
    return b;
  }

  Batch<S> whole(const Split<S>& split) const {
    std::vector<std::size_t> idx(split.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return batch(split, idx, false, 0, 0, 0);
  }
};

namespace detail {

inline std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir, bool dirs) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (dirs ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

template <class S>
Split<S> load_image_split(const std::filesystem::path& dir, const std::vector<std::string>& classes,
                          const DatasetSpec& spec) {
  std::vector<Tensor<double>> images;
  Split<S> s;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto cdir = dir / classes[c];
    if (!std::filesystem::is_directory(cdir)) continue;
    for (const auto& f : sorted_entries(cdir, false)) {
      auto img = read_pnm(f);
      if (img.dim(1) != spec.image_h || img.dim(2) != spec.image_w || img.dim(3) != spec.channels)
        throw IngestionError(f.string() + ": image " + shape_str(img.shape) + " does not match configured size (" +
                             std::to_string(spec.image_h) + "," + std::to_string(spec.image_w) + "," +
                             std::to_string(spec.channels) + ")");
      images.push_back(std::move(img));
      s.y.push_back(static_cast<int>(c));
    }
  }
  if (images.empty()) throw IngestionError("no images found under " + dir.string());
  const std::size_t per = spec.image_h * spec.image_w * spec.channels;
  s.x = Tensor<S>({images.size(), spec.image_h, spec.image_w, spec.channels});
  for (std::size_t i = 0; i < images.size(); ++i)
    std::transform(images[i].data.begin(), images[i].data.end(), s.x.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                   [](double v) { return static_cast<S>(v); });
  return s;
}

}  // namespace detail

inline constexpr const char* kStatsManifest = "atsc_stats.json";

/// Loads `<root>/train/<class>/*` and `<root>/test/<class>/*`. Class labels follow the sorted
/// subdirectory names of `train/`. Channel statistics are cached in `<root>/atsc_stats.json`.
template <class S = double>
Dataset<S> load_image_folder(const DatasetSpec& spec) {
  spec.validate();
  const auto root = resolve_data_path(spec.path);
  if (!std::filesystem::is_directory(root)) throw IngestionError("dataset.path: directory not found: " + root.string());
  const auto train_dir = root / "train", test_dir = root / "test";
  if (!std::filesystem::is_directory(train_dir) || !std::filesystem::is_directory(test_dir))
    throw IngestionError(root.string() + ": expected train/ and test/ subdirectories");
  std::vector<std::string> classes;
  for (const auto& d : detail::sorted_entries(train_dir, true)) classes.push_back(d.filename().string());
  if (classes.size() != spec.num_classes)
    throw IngestionError(root.string() + ": found " + std::to_string(classes.size()) + " class directories, expected " +
                         std::to_string(spec.num_classes));

  Dataset<S> ds;
  ds.spec = spec;
  ds.train = detail::load_image_split<S>(train_dir, classes, spec);
  ds.test = detail::load_image_split<S>(test_dir, classes, spec);

  const auto manifest = root / kStatsManifest;
  std::optional<ChannelStats> cached;
  if (std::ifstream in(manifest); in) {
    try {
      const auto j = nlohmann::json::parse(in);
      if (j.at("train_count").get<std::size_t>() == ds.train.size() &&
          j.at("channels").get<std::size_t>() == spec.channels)
        cached = ChannelStats{j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
    } catch (const nlohmann::json::exception&) {
      warn("ignoring unreadable stats manifest " + manifest.string());
    }
  }
  if (!cached) {
    cached = compute_channel_stats(ds.train.x.template cast<double>());
    nlohmann::json j{{"train_count", ds.train.size()},
                     {"channels", spec.channels},
                     {"mean", cached->mean},
                     {"std", cached->stddev}};
    if (std::ofstream out(manifest); out)
      out << j.dump(2) << '\n';
    else
      warn("could not cache dataset statistics at " + manifest.string());
  }
  ds.stats = cached;
  return ds;
}

template <class S = double>
Dataset<S> load_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetSpec::Kind::image_folder) return load_image_folder<S>(spec);
  Dataset<S> ds;
  ds.spec = spec;
  std::tie(ds.train, ds.test) = make_synthetic<S>(spec);
  return ds;
}

}  // namespace atsc
