#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "icanet/random.hpp"
#include "icanet/tensor.hpp"
#include "oracles.hpp"

namespace testutil {

template <icanet::Real T>
icanet::Tensor<T> random_tensor(icanet::Shape s, icanet::Rng& rng, double lo = -1.0, double hi = 1.0) {
  icanet::Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <icanet::Real T>
oracle::Array4 to_array(const icanet::Tensor<T>& t) {
  oracle::Array4 a(t.n(), t.c(), t.h(), t.w());
  for (std::size_t i = 0; i < t.numel(); ++i) a.v[i] = double(t[i]);
  return a;
}

/// Ground truth of 16 px wide vertical stripes plus logits at strides 4, 8
/// and 16 that reproduce it. Every output cell lies inside one stripe and the
/// mask is constant along y, so bilinear upsampling reduces to 1-D and never
/// lands halfway between opposite-signed cells: the sign of every upsampled
/// logit matches the mask and its magnitude is at least magnitude / 16.
struct PerfectCase {
  icanet::Tensor<double> gt;
  std::array<icanet::Tensor<double>, 3> logits;
};

inline PerfectCase perfect_case(std::size_t n, std::size_t hw, icanet::Rng& rng, double magnitude = 1e4) {
  const std::size_t stripes = hw / 16;
  PerfectCase pc;
  pc.gt = icanet::Tensor<double>(icanet::Shape{n, 1, hw, hw});
  std::vector<int> fg(n * stripes);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < stripes; ++k) fg[b * stripes + k] = int(rng.below(2));
    fg[b * stripes + rng.below(std::uint32_t(stripes / 2))] = 1;  // never empty, never full
    fg[b * stripes + stripes / 2 + rng.below(std::uint32_t(stripes - stripes / 2))] = 0;
  }
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < hw; ++y)
      for (std::size_t x = 0; x < hw; ++x) pc.gt[pc.gt.offset(b, 0, y, x)] = fg[b * stripes + x / 16];
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t stride = std::size_t{4} << i, e = hw / stride;
    auto& l = pc.logits[i];
    l = icanet::Tensor<double>(icanet::Shape{n, 1, e, e});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < e; ++y)
        for (std::size_t x = 0; x < e; ++x)
          l[l.offset(b, 0, y, x)] = pc.gt[pc.gt.offset(b, 0, y * stride, x * stride)] > 0.5 ? magnitude : -magnitude;
  }
  return pc;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("icanet_" + tag + "_" + std::to_string(icanet::Rng(std::random_device{}()).next_u32()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  [[nodiscard]] std::string str(const std::string& leaf = {}) const { return (path / leaf).string(); }
};

}  // namespace testutil
