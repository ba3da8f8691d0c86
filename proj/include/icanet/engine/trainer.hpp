#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "icanet/data/dataset.hpp"
#include "icanet/engine/checkpoint.hpp"
#include "icanet/engine/config.hpp"
#include "icanet/engine/optim.hpp"
#include "icanet/loss/supervision.hpp"
#include "icanet/model/icanet.hpp"

namespace icanet::engine {

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr_backbone = 0.0;
  double lr_body = 0.0;
  loss::LossReport report;
};

/// Loads externally supplied extractor weights (checkpoint format, names "cams.stageK.weight|bias").
template <Real T>
void load_cams_weights(loss::CamsBackbone<T>& cams, const std::string& path) {
  nn::ParamRegistry<T> reg;
  cams.collect(reg);
  load_registry(reg, read_checkpoint(path));
}

namespace detail {

inline std::vector<std::uint32_t> engine_words(const Rng& rng) {
  std::ostringstream os;
  os << rng.engine();
  std::istringstream is(os.str());
  std::vector<std::uint32_t> words;
  for (unsigned long long v; is >> v;) words.push_back(static_cast<std::uint32_t>(v));
  return words;
}

inline void restore_engine(Rng& rng, const std::vector<std::uint32_t>& words) {
  std::ostringstream os;
  for (std::size_t i = 0; i < words.size(); ++i) os << (i ? " " : "") << words[i];
  std::istringstream is(os.str());
  is >> rng.engine();
  if (!is) throw CheckpointError("checkpoint: corrupt rng state");
}

}  // namespace detail

/// The configuration a checkpoint was trained with.
inline TrainConfig checkpoint_config(const std::vector<Record>& recs) {
  return parse_train_config(json::parse(record_text(find_record(recs, "meta.config"))));
}

/// A float model restored from a training checkpoint.
inline model::IcaNet<float> load_model(const std::string& path) {
  const auto recs = read_checkpoint(path);
  model::IcaNet<float> net(checkpoint_config(recs).model);
  auto reg = net.registry();
  load_registry(reg, recs);
  return net;
}

/// Deterministic single-process trainer. Given (config, data) every step, log
/// entry and checkpoint byte is reproducible, and a checkpoint restores the
/// exact continuation.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<data::SamplePair> data)
      : cfg_(std::move(cfg)), data_(std::move(data)), model_(cfg_.model), cams_(cfg_.loss.cams_seed),
        rng_({cfg_.seed, 0x5348u}) {
    cfg_.validate(data_.size());
    for (const auto& p : data_) {
      if (p.rgb.h() != cfg_.model.input_h || p.rgb.w() != cfg_.model.input_w) {
        throw ShapeError("trainer: sample " + p.id + " is not at the model input size");
      }
    }
    if (cfg_.cams_weights) load_cams_weights(cams_, *cfg_.cams_weights);
    model_.enable_grads();
    total_ = cfg_.total_steps(data_.size());
    warmup_ = cfg_.warmup(total_);
    order_.resize(data_.size());
  }

  [[nodiscard]] std::size_t total_steps() const { return total_; }
  [[nodiscard]] std::size_t warmup_steps() const { return warmup_; }
  [[nodiscard]] std::size_t step_count() const { return step_; }
  [[nodiscard]] bool done() const { return step_ >= total_; }
  [[nodiscard]] std::size_t batches_per_epoch() const { return data_.size() / cfg_.batch_size; }
  model::IcaNet<float>& model() { return model_; }
  loss::CamsBackbone<float>& cams() { return cams_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }

  /// Sample indices and augmented pairs of the batch the next step will use.
  data::Batch next_batch() {
    const std::size_t bpe = batches_per_epoch();
    const std::size_t epoch = step_ / bpe, pos = step_ % bpe;
    if (pos == 0 && shuffled_epoch_ != epoch) {
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = std::uint32_t(i);
      shuffle(order_, rng_);
      shuffled_epoch_ = epoch;
    }
    std::vector<data::SamplePair> items;
    for (std::size_t k = 0; k < cfg_.batch_size; ++k) {
      const std::uint32_t idx = order_[pos * cfg_.batch_size + k];
      Rng r = data::sample_rng(cfg_.seed ^ (cfg_.augment.seed * 0x9E3779B1u), std::uint32_t(epoch), idx);
      items.push_back(data::augment(data_[idx], cfg_.augment, r));
    }
    return data::make_batch(items);
  }

  /// One optimisation step. Throws NumericError naming the batch on a non-finite loss.
  StepLog step() {
    if (done()) throw Error("trainer: all " + std::to_string(total_) + " steps already taken");
    StepLog log;
    log.step = step_;
    log.epoch = step_ / batches_per_epoch();
    const data::Batch batch = next_batch();
    log.lr_backbone = lr_schedule(step_, total_, warmup_, cfg_.lr_backbone);
    log.lr_body = lr_schedule(step_, total_, warmup_, cfg_.lr_body);

    model_.set_mode(nn::Mode::train);
    model_.zero_grads();
    Tape<float> tape;
    const auto feats = model_.forward(tape, batch.rgb, batch.thermal);
    auto tl = loss::total_loss(feats.o[0], feats.o[1], feats.o[2], batch.gt, cfg_.loss, cams_);
    log.report = tl.report;
    if (!std::isfinite(tl.report.total)) {
      std::string ids;
      for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
      throw NumericError("trainer: non-finite loss at step " + std::to_string(step_) + " (batch " + ids + ")");
    }
    tape.backward(tl.value);
    auto reg = model_.registry();
    sgd_.step(reg, log.lr_backbone, log.lr_body, cfg_.momentum, cfg_.weight_decay);
    ++step_;
    return log;
  }

  void run(const std::function<void(const StepLog&)>& on_step = {}, std::size_t until = 0) {
    const std::size_t stop = until ? std::min(until, total_) : total_;
    while (step_ < stop) {
      const auto log = step();
      if (on_step) on_step(log);
    }
  }

  /// Parameters, batch-norm statistics, momenta, step counter, shuffle state.
  [[nodiscard]] std::vector<Record> state() {
    auto recs = registry_records(model_.registry());
    for (const auto& [name, v] : sgd_.momenta()) {
      recs.push_back(Record::from_floats("momentum." + name, Shape{1, 1, 1, v.size()}, v));
    }
    recs.push_back(Record::from_words("meta.step", {std::uint32_t(step_), std::uint32_t(std::uint64_t(step_) >> 32)}));
    recs.push_back(Record::from_words(
        "meta.shuffled_epoch", {std::uint32_t(shuffled_epoch_), std::uint32_t(std::uint64_t(shuffled_epoch_) >> 32)}));
    recs.push_back(Record::from_words("meta.order", order_));
    recs.push_back(Record::from_words("meta.rng", detail::engine_words(rng_)));
    recs.push_back(text_record("meta.config", to_json(cfg_).dump()));
    return recs;
  }

  void save(const std::string& path) { write_checkpoint(path, state()); }

  void load_state(const std::vector<Record>& recs) {
    auto reg = model_.registry();
    load_registry(reg, recs);
    sgd_.momenta().clear();
    const std::string prefix = "momentum.";
    for (const auto& r : recs) {
      if (r.name.rfind(prefix, 0) != 0) continue;
      const auto f = r.floats();
      sgd_.momenta()[r.name.substr(prefix.size())] = std::vector<float>(f.begin(), f.end());
    }
    auto u64 = [&](const char* name) {
      const auto& w = find_record(recs, name).bits;
      if (w.size() != 2) throw CheckpointError(std::string("checkpoint: malformed ") + name);
      return std::size_t(w[0]) | (std::size_t(w[1]) << 32);
    };
    step_ = u64("meta.step");
    shuffled_epoch_ = u64("meta.shuffled_epoch");
    const auto& order = find_record(recs, "meta.order").bits;
    if (order.size() != data_.size()) throw CheckpointError("checkpoint: dataset size differs from the saved run");
    order_ = order;
    detail::restore_engine(rng_, find_record(recs, "meta.rng").bits);
  }

  void load(const std::string& path) { load_state(read_checkpoint(path)); }

 private:
  TrainConfig cfg_;
  std::vector<data::SamplePair> data_;
  model::IcaNet<float> model_;
  loss::CamsBackbone<float> cams_;
  Sgd<float> sgd_;
  Rng rng_;
  std::size_t total_ = 0, warmup_ = 0, step_ = 0;
  std::size_t shuffled_epoch_ = std::size_t(-1);
  std::vector<std::uint32_t> order_;
};

}  // namespace icanet::engine
