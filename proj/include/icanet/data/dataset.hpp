#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "icanet/data/image_io.hpp"
#include "icanet/ops.hpp"
#include "icanet/random.hpp"

namespace icanet::data {

namespace fs = std::filesystem;

/// Aligned RGB / thermal / ground-truth triple, each (1, C, H, W).
struct SamplePair {
  Tensor<float> rgb;      // 3 channels in [0,1]
  Tensor<float> thermal;  // 3 channels in [0,1]
  Tensor<float> gt;       // 1 channel, {0,1}
  std::string id;
};

struct ManifestEntry {
  std::string rgb, thermal, gt, id;
};

enum class Split { train, test };

struct DatasetManifest {
  std::string root;
  std::vector<ManifestEntry> entries;
  Split split = Split::train;
};

namespace detail {

inline void check_unique_ids(const DatasetManifest& m) {
  std::set<std::string> seen;
  for (const auto& e : m.entries)
    if (!seen.insert(e.id).second) throw Error("manifest: duplicate sample id '" + e.id + "'");
}

inline bool is_image(const fs::path& p) {
  const std::string ext = lower_ext(p.string());
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

inline std::map<std::string, std::string> images_by_stem(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& de : fs::directory_iterator(dir)) {
    if (!de.is_regular_file() || !is_image(de.path())) continue;
    if (!out.emplace(de.path().stem().string(), de.path().string()).second) {
      throw Error("dataset: two images share the stem '" + de.path().stem().string() + "' in " + dir.string());
    }
  }
  return out;
}

}  // namespace detail

/// Tab-separated "rgb<TAB>thermal<TAB>gt[<TAB>id]" lines, paths relative to the
/// manifest's directory. Blank lines and '#' comments are ignored.
inline DatasetManifest parse_manifest(std::istream& in, const std::string& root) {
  DatasetManifest m;
  m.root = root;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, '\t');) cols.push_back(col);
    if (cols.size() != 3 && cols.size() != 4) {
      throw Error("manifest line " + std::to_string(lineno) + ": expected 3 or 4 tab-separated fields");
    }
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (fs::path(root) / p).string(); };
    ManifestEntry e{resolve(cols[0]), resolve(cols[1]), resolve(cols[2]),
                    cols.size() == 4 ? cols[3] : fs::path(cols[0]).stem().string()};
    m.entries.push_back(std::move(e));
  }
  detail::check_unique_ids(m);
  return m;
}

/// Pairs files across RGB/, T/ and GT/ sub-directories by file stem.
inline DatasetManifest discover(const std::string& root) {
  const fs::path r(root);
  for (const char* sub : {"RGB", "T", "GT"})
    if (!fs::is_directory(r / sub)) throw Error("dataset: " + (r / sub).string() + " is not a directory");
  const auto rgb = detail::images_by_stem(r / "RGB");
  const auto th = detail::images_by_stem(r / "T");
  const auto gt = detail::images_by_stem(r / "GT");
  DatasetManifest m;
  m.root = root;
  for (const auto& [stem, path] : rgb) {
    const auto t = th.find(stem);
    const auto g = gt.find(stem);
    if (t == th.end() || g == gt.end()) throw Error("dataset: no thermal/GT counterpart for " + path);
    m.entries.push_back({path, t->second, g->second, stem});
  }
  if (m.entries.size() != th.size() || m.entries.size() != gt.size()) {
    throw Error("dataset: RGB/, T/ and GT/ hold different sample sets under " + root);
  }
  return m;
}

/// A directory is auto-discovered; anything else is read as a manifest file.
inline DatasetManifest load_manifest(const std::string& path, Split split = Split::train) {
  DatasetManifest m;
  if (fs::is_directory(path)) {
    m = discover(path);
  } else {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path);
    m = parse_manifest(f, fs::path(path).parent_path().string());
  }
  if (m.entries.empty()) throw Error("dataset: no samples in " + path);
  m.split = split;
  return m;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  for (const auto& e : entries) f << e.rgb << '\t' << e.thermal << '\t' << e.gt << '\t' << e.id << '\n';
}

namespace detail {

inline Tensor<float> to_channels(const Tensor<float>& img, std::size_t c, const std::string& path) {
  if (img.c() == c) return img;
  Tensor<float> out(Shape{1, c, img.h(), img.w()});
  const std::size_t plane = img.h() * img.w();
  if (img.c() == 1) {
    for (std::size_t k = 0; k < c; ++k) std::copy_n(img.data().begin(), plane, out.data().begin() + k * plane);
  } else if (img.c() == 3 && c == 1) {
    for (std::size_t p = 0; p < plane; ++p) out[p] = (img[p] + img[plane + p] + img[2 * plane + p]) / 3.0f;
  } else {
    throw IoError(path + ": unsupported channel count " + std::to_string(img.c()));
  }
  return out;
}

inline Tensor<float> fit(const Tensor<float>& img, std::size_t h, std::size_t w) {
  if (img.h() == h && img.w() == w) return img;
  return ops::resize_bilinear(img, h, w);
}

}  // namespace detail

/// RGB and thermal of an entry, 3 channels each, resized to (h, w) and clamped to [0, 1].
inline std::pair<Tensor<float>, Tensor<float>> load_inputs(const ManifestEntry& e, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw Error("load_inputs: target size must be positive");
  auto rgb = detail::to_channels(read_image(e.rgb), 3, e.rgb);
  auto th = detail::to_channels(read_image(e.thermal), 3, e.thermal);
  if (rgb.h() != th.h() || rgb.w() != th.w()) {
    throw Error("load_inputs: " + e.rgb + " is " + std::to_string(rgb.h()) + "x" + std::to_string(rgb.w()) + " but " +
                e.thermal + " is " + std::to_string(th.h()) + "x" + std::to_string(th.w()));
  }
  std::pair<Tensor<float>, Tensor<float>> out{detail::fit(rgb, h, w), detail::fit(th, h, w)};
  for (auto& v : out.first.data()) v = std::clamp(v, 0.0f, 1.0f);
  for (auto& v : out.second.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

/// Ground truth binarised at 0.5; resized first when (h, w) is given.
inline Tensor<float> load_gt(const ManifestEntry& e, std::optional<std::pair<std::size_t, std::size_t>> size = {}) {
  auto gt = detail::to_channels(read_image(e.gt), 1, e.gt);
  if (size) gt = detail::fit(gt, size->first, size->second);
  for (auto& v : gt.data()) v = v >= 0.5f ? 1.0f : 0.0f;
  return gt;
}

/// Decodes, normalises and resizes one triple; ground truth is binarised at 0.5 after resizing.
inline SamplePair load_pair(const ManifestEntry& e, std::size_t h, std::size_t w) {
  auto [rgb, th] = load_inputs(e, h, w);
  const auto native_rgb = read_image(e.rgb);
  const auto native_gt = read_image(e.gt);
  if (native_rgb.h() != native_gt.h() || native_rgb.w() != native_gt.w()) {
    throw Error("load_pair: ground truth " + e.gt + " differs in size from " + e.rgb);
  }
  return {std::move(rgb), std::move(th), load_gt(e, std::pair{h, w}), e.id};
}

// ---------------------------------------------------------------- augmentation

enum class NoiseKind { gaussian, salt_pepper, uniform };
enum class Modality { rgb, thermal };

struct AugmentConfig {
  double p_zero = 0.05;
  double p_noise = 0.05;
  double gaussian_sigma = 0.1;
  double salt_pepper_fraction = 0.05;
  double uniform_amplitude = 0.2;
  std::uint32_t seed = 0;
  std::optional<Modality> zero_only;  // pin the zeroed modality (tests, ablations)

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(p_zero) || !prob(p_noise)) throw Error("augment: probabilities must lie in [0, 1]");
    if (p_zero + p_noise > 1.0) throw Error("augment: p_zero + p_noise must not exceed 1");
    if (!(gaussian_sigma >= 0.0)) throw Error("augment: gaussian_sigma must be >= 0");
    if (!prob(salt_pepper_fraction)) throw Error("augment: salt_pepper_fraction must lie in [0, 1]");
    if (!(uniform_amplitude >= 0.0)) throw Error("augment: uniform_amplitude must be >= 0");
  }
};

/// What augment() did to one pair.
struct AugmentEvent {
  std::optional<Modality> zeroed;
  std::optional<Modality> noised;
  NoiseKind kind = NoiseKind::gaussian;
};

/// Independent stream for sample `index` in `epoch`, so batching and
/// concurrency never change what a sample sees.
inline Rng sample_rng(std::uint32_t seed, std::uint32_t epoch, std::uint32_t index) {
  return Rng({seed, epoch, index, 0x41554721u});
}

/// Adds one noise kind to an image and keeps it inside [0, 1].
inline Tensor<float> add_noise(Tensor<float> img, NoiseKind kind, const AugmentConfig& cfg, Rng& rng) {
  auto d = img.data();
  switch (kind) {
    case NoiseKind::gaussian:
      for (auto& v : d) v = float(std::clamp(double(v) + cfg.gaussian_sigma * rng.normal(), 0.0, 1.0));
      break;
    case NoiseKind::uniform:
      for (auto& v : d) v = float(std::clamp(double(v) + rng.uniform(-cfg.uniform_amplitude, cfg.uniform_amplitude), 0.0, 1.0));
      break;
    case NoiseKind::salt_pepper: {
      // An exact share of pixel positions, every channel of a chosen pixel set alike.
      const std::size_t plane = img.h() * img.w();
      const auto count = static_cast<std::size_t>(std::llround(cfg.salt_pepper_fraction * double(plane)));
      std::vector<std::size_t> idx(plane);
      for (std::size_t i = 0; i < plane; ++i) idx[i] = i;
      for (std::size_t i = 0; i < count; ++i) {
        std::swap(idx[i], idx[i + rng.below(std::uint32_t(plane - i))]);
        const float v = rng.below(2) ? 1.0f : 0.0f;
        for (std::size_t n = 0; n < img.n(); ++n)
          for (std::size_t c = 0; c < img.c(); ++c) d[(n * img.c() + c) * plane + idx[i]] = v;
      }
      break;
    }
  }
  return img;
}

/// Modality zeroing and noise injection as two independent draws; GT is never touched.
inline SamplePair augment(SamplePair p, const AugmentConfig& cfg, Rng& rng, AugmentEvent* event = nullptr) {
  cfg.validate();
  AugmentEvent ev;
  // Draw every decision up front so the stream consumption is branch-independent.
  const double u_zero = rng.uniform();
  const auto m_zero = rng.below(2) ? Modality::thermal : Modality::rgb;
  const double u_noise = rng.uniform();
  const auto m_noise = rng.below(2) ? Modality::thermal : Modality::rgb;
  const auto kind = static_cast<NoiseKind>(rng.below(3));
  if (u_zero < cfg.p_zero) {
    ev.zeroed = cfg.zero_only.value_or(m_zero);
    (*ev.zeroed == Modality::rgb ? p.rgb : p.thermal).fill(0.0f);
  }
  if (u_noise < cfg.p_noise) {
    ev.noised = m_noise;
    ev.kind = kind;
    auto& target = m_noise == Modality::rgb ? p.rgb : p.thermal;
    target = add_noise(std::move(target), kind, cfg, rng);
  }
  if (event) *event = ev;
  return p;
}

// ---------------------------------------------------------------- synthetic data

enum class ShapeKind { rectangle, disc };

struct SynthSpec {
  std::size_t h = 64, w = 64;
  ShapeKind shape = ShapeKind::rectangle;
  double cx = 32, cy = 32;  // centre, pixel units
  double rx = 12, ry = 12;  // half extents; a disc uses rx as radius
  bool hot = true;          // thermal signature inside the shape
  double clutter = 0.0;     // background texture strength in [0,1]
  bool low_light = false;   // darkened RGB
  std::array<double, 3> color{0.9, 0.2, 0.1};
};

inline bool synth_inside(const SynthSpec& s, std::size_t y, std::size_t x) {
  const double px = double(x) + 0.5 - s.cx, py = double(y) + 0.5 - s.cy;
  if (s.shape == ShapeKind::rectangle) return std::abs(px) <= s.rx && std::abs(py) <= s.ry;
  return px * px + py * py <= s.rx * s.rx;
}

/// Coloured shape on a textured background, a thermal map hot inside the
/// shape, and the exact shape mask as ground truth.
inline SamplePair synth_pair(const SynthSpec& s, Rng& rng, std::string id = "synth") {
  if (s.h == 0 || s.w == 0) throw Error("synth: empty image");
  const double ry = s.shape == ShapeKind::disc ? s.rx : s.ry;
  if (s.rx <= 0 || ry <= 0 || s.cx - s.rx < 0 || s.cy - ry < 0 || s.cx + s.rx > double(s.w) ||
      s.cy + ry > double(s.h)) {
    throw Error("synth: shape out of bounds");
  }
  if (s.clutter < 0 || s.clutter > 1) throw Error("synth: clutter must lie in [0, 1]");
  const std::size_t plane = s.h * s.w;
  SamplePair p{Tensor<float>(Shape{1, 3, s.h, s.w}), Tensor<float>(Shape{1, 3, s.h, s.w}),
               Tensor<float>(Shape{1, 1, s.h, s.w}), std::move(id)};
  // Background: a soft gradient plus stripes and speckle scaled by clutter.
  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double freq = rng.uniform(0.2, 0.8);
  std::array<double, 3> base{rng.uniform(0.3, 0.6), rng.uniform(0.3, 0.6), rng.uniform(0.3, 0.6)};
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      const std::size_t i = y * s.w + x;
      const bool in = synth_inside(s, y, x);
      const double stripe = std::sin(freq * double(x + y) + phase);
      const double speckle = rng.uniform(-1.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = in ? s.color[c] : base[c] + s.clutter * (0.25 * stripe + 0.15 * speckle);
        if (s.low_light) v *= 0.1;
        p.rgb[c * plane + i] = float(std::clamp(v, 0.0, 1.0));
      }
      double t = 0.2 + s.clutter * 0.1 * rng.uniform(-1.0, 1.0);
      if (in && s.hot) t = 0.9;
      for (std::size_t c = 0; c < 3; ++c) p.thermal[c * plane + i] = float(std::clamp(t, 0.0, 1.0));
      p.gt[i] = in ? 1.0f : 0.0f;
    }
  }
  return p;
}

/// A random, in-bounds spec for building toy datasets.
inline SynthSpec random_synth_spec(std::size_t h, std::size_t w, Rng& rng) {
  SynthSpec s;
  s.h = h;
  s.w = w;
  s.shape = rng.below(2) ? ShapeKind::disc : ShapeKind::rectangle;
  const double m = double(std::min(h, w));
  s.rx = rng.uniform(0.15, 0.3) * m;
  s.ry = s.shape == ShapeKind::disc ? s.rx : rng.uniform(0.15, 0.3) * m;
  s.cx = rng.uniform(s.rx, double(w) - s.rx);
  s.cy = rng.uniform(s.ry, double(h) - s.ry);
  s.clutter = rng.uniform(0.0, 0.6);
  s.low_light = rng.uniform() < 0.25;
  s.hot = true;
  s.color = {rng.uniform(0.6, 1.0), rng.uniform(0.0, 0.4), rng.uniform(0.0, 1.0)};
  return s;
}

/// Stacks single-sample tensors into one batch.
struct Batch {
  Tensor<float> rgb, thermal, gt;
  std::vector<std::string> ids;
};

inline Batch make_batch(const std::vector<SamplePair>& items) {
  if (items.empty()) throw Error("make_batch: no samples");
  const Shape s = items[0].rgb.shape();
  Batch b{Tensor<float>(Shape{items.size(), 3, s.h, s.w}), Tensor<float>(Shape{items.size(), 3, s.h, s.w}),
          Tensor<float>(Shape{items.size(), 1, s.h, s.w}), {}};
  for (std::size_t n = 0; n < items.size(); ++n) {
    const auto& it = items[n];
    if (it.rgb.shape() != s || it.thermal.shape() != s || it.gt.h() != s.h || it.gt.w() != s.w) {
      throw ShapeError("make_batch: sample " + it.id + " differs in size");
    }
    std::copy(it.rgb.data().begin(), it.rgb.data().end(), b.rgb.data().begin() + n * 3 * s.plane());
    std::copy(it.thermal.data().begin(), it.thermal.data().end(), b.thermal.data().begin() + n * 3 * s.plane());
    std::copy(it.gt.data().begin(), it.gt.data().end(), b.gt.data().begin() + n * s.plane());
    b.ids.push_back(it.id);
  }
  return b;
}

}  // namespace icanet::data
