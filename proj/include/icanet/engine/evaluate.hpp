#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "icanet/data/dataset.hpp"
#include "icanet/engine/checkpoint.hpp"
#include "icanet/metrics/metrics.hpp"
#include "icanet/model/icanet.hpp"

namespace icanet::engine {

/// Logits o2 for a batch, eval-mode batch norm.
template <Real T>
Tensor<T> o2_logits(model::IcaNet<T>& net, const Tensor<T>& rgb, const Tensor<T>& thermal) {
  net.set_mode(nn::Mode::eval);
  Tape<T> tape;
  return net.forward(tape, rgb, thermal).o[0].value();
}

/// sigmoid(up(o2)) of batch item n at (h, w).
template <Real T>
Tensor<T> saliency_map(const Tensor<T>& o2, std::size_t n, std::size_t h, std::size_t w) {
  const std::size_t plane = o2.h() * o2.w();
  Tensor<T> one(Shape{1, 1, o2.h(), o2.w()});
  std::copy_n(o2.data().begin() + n * plane, plane, one.data().begin());
  Tensor<T> m = ops::resize_bilinear(one, h, w);
  for (auto& v : m.data()) v = ops::sigmoid_value(v);
  return m;
}

/// Every manifest entry through the model; maps are compared with ground truth at its stored size.
inline metrics::MetricsReport evaluate(model::IcaNet<float>& net, const data::DatasetManifest& manifest,
                                       std::size_t batch_size = 1) {
  if (batch_size == 0) throw Error("evaluate: batch_size must be positive");
  const auto& mc = net.config();
  std::vector<metrics::ImageMetrics> rows;
  for (std::size_t start = 0; start < manifest.entries.size(); start += batch_size) {
    const std::size_t end = std::min(manifest.entries.size(), start + batch_size);
    std::vector<data::SamplePair> items;
    for (std::size_t i = start; i < end; ++i) {
      auto [rgb, th] = data::load_inputs(manifest.entries[i], mc.input_h, mc.input_w);
      items.push_back({std::move(rgb), std::move(th), Tensor<float>(Shape{1, 1, mc.input_h, mc.input_w}), {}});
    }
    const auto batch = data::make_batch(items);
    const Tensor<float> o2 = o2_logits(net, batch.rgb, batch.thermal);
    for (std::size_t i = start; i < end; ++i) {
      const Tensor<float> gt = data::load_gt(manifest.entries[i]);
      const Tensor<float> m = saliency_map(o2, i - start, gt.h(), gt.w());
      metrics::SaliencyEval ev(gt.h(), gt.w(), std::vector<double>(m.data().begin(), m.data().end()),
                               std::vector<double>(gt.data().begin(), gt.data().end()));
      rows.push_back(metrics::evaluate_image(ev, manifest.entries[i].id));
    }
  }
  return metrics::summarize(std::move(rows));
}

/// Writes round(255 * saliency) as <out_dir>/<id>.png, at the ground-truth size when one is listed
/// and at the RGB image size otherwise.
inline std::vector<std::string> predict(model::IcaNet<float>& net, const std::vector<data::ManifestEntry>& entries,
                                        const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw data::IoError("cannot create output directory " + out_dir);
  const auto& mc = net.config();
  std::vector<std::string> written;
  for (const auto& e : entries) {
    auto [rgb, th] = data::load_inputs(e, mc.input_h, mc.input_w);
    const auto ref = data::read_image(!e.gt.empty() && std::filesystem::exists(e.gt) ? e.gt : e.rgb);
    const Tensor<float> o2 = o2_logits(net, rgb, th);
    const std::string path = (std::filesystem::path(out_dir) / (e.id + ".png")).string();
    data::write_image(path, saliency_map(o2, 0, ref.h(), ref.w()));
    written.push_back(path);
  }
  return written;
}

}  // namespace icanet::engine
