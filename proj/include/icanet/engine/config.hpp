#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "icanet/data/dataset.hpp"
#include "icanet/loss/supervision.hpp"
#include "icanet/model/config.hpp"

namespace icanet::engine {

using nlohmann::json;

struct TrainConfig {
  double lr_backbone = 5e-3;
  double lr_body = 5e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 40;
  std::size_t batch_size = 2;
  std::optional<std::size_t> steps;          // overrides epochs * batches-per-epoch
  std::optional<std::size_t> warmup_steps;   // default: 10% of total
  std::size_t checkpoint_every = 0;          // 0: only the final checkpoint
  std::uint32_t seed = 1;
  loss::LossConfig loss;
  std::optional<std::string> cams_weights;   // external extractor weights, checkpoint format
  model::ModelConfig model;
  data::AugmentConfig augment;

  /// Total optimisation steps for a dataset of `samples` items (incomplete trailing batches are dropped).
  [[nodiscard]] std::size_t total_steps(std::size_t samples) const {
    if (steps) return *steps;
    return epochs * (samples / batch_size);
  }

  [[nodiscard]] std::size_t warmup(std::size_t total) const { return warmup_steps ? *warmup_steps : total / 10; }

  void validate(std::size_t samples) const {
    if (!(lr_backbone > 0) || !(lr_body > 0)) throw model::ConfigError("train: learning rates must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw model::ConfigError("train: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw model::ConfigError("train: weight_decay must be >= 0");
    if (batch_size == 0) throw model::ConfigError("train: batch_size must be positive");
    if (samples < batch_size) throw model::ConfigError("train: fewer samples than one batch");
    const std::size_t total = total_steps(samples);
    if (total == 0) throw model::ConfigError("train: zero training steps");
    if (warmup(total) >= total) throw model::ConfigError("train: warmup_steps must be smaller than total steps");
    loss.validate();
    model.validate();
    augment.validate();
  }
};

namespace detail {

class KeyChecker {
 public:
  KeyChecker(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw model::ConfigError(where_ + ": expected a JSON object");
  }
  ~KeyChecker() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw model::ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }
  template <typename V>
  void get(const char* key, V& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw model::ConfigError(where_ + "." + key + ": " + e.what());
    }
  }
  template <typename V>
  void get(const char* key, std::optional<V>& out) {
    used_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    V v{};
    get(key, v);
    out = v;
  }
  const json* sub(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

}  // namespace detail

inline void from_json_strict(const json& j, loss::LossConfig& c, std::optional<std::string>& cams_weights) {
  detail::KeyChecker k(j, "loss");
  k.get("lambda", c.lambda);
  k.get("stage_weights", c.stage_weights);
  k.get("output_weights", c.output_weights);
  k.get("wce_m", c.wce_m);
  k.get("cams_seed", c.cams_seed);
  k.get("cams_weights", cams_weights);
}

inline void from_json_strict(const json& j, model::ModelConfig& c) {
  detail::KeyChecker k(j, "model");
  k.get("input_h", c.input_h);
  k.get("input_w", c.input_w);
  k.get("unified_channels", c.unified_channels);
  k.get("backbone_widths", c.backbone_widths);
  k.get("bam_reduction", c.bam_reduction);
  k.get("seed", c.seed);
  k.get("use_svp", c.use_svp);
  k.get("use_ssp", c.use_ssp);
  k.get("use_bam", c.use_bam);
  k.get("ssp_ratio_table", c.ssp_ratio_table);
  if (const json* svp = k.sub("svp_table")) {
    // [[ [[kernel, dilation], ...] per branch ] per stage]
    std::array<std::vector<std::vector<std::array<std::size_t, 2>>>, model::kNumStages> raw;
    try {
      raw = svp->get<decltype(raw)>();
    } catch (const json::exception& e) {
      throw model::ConfigError(std::string("model.svp_table: ") + e.what());
    }
    for (std::size_t s = 0; s < model::kNumStages; ++s) {
      c.svp_table[s].clear();
      for (const auto& branch : raw[s]) {
        model::AtrousChain chain;
        for (const auto& kd : branch) chain.push_back({kd[0], kd[1]});
        c.svp_table[s].push_back(chain);
      }
    }
  }
}

inline void from_json_strict(const json& j, data::AugmentConfig& c) {
  detail::KeyChecker k(j, "augment");
  k.get("p_zero", c.p_zero);
  k.get("p_noise", c.p_noise);
  k.get("gaussian_sigma", c.gaussian_sigma);
  k.get("salt_pepper_fraction", c.salt_pepper_fraction);
  k.get("uniform_amplitude", c.uniform_amplitude);
  k.get("seed", c.seed);
}

/// Parses a training configuration; every key is optional, unknown keys are errors.
inline TrainConfig parse_train_config(const json& j) {
  TrainConfig c;
  detail::KeyChecker k(j, "config");
  k.get("lr_backbone", c.lr_backbone);
  k.get("lr_body", c.lr_body);
  k.get("momentum", c.momentum);
  k.get("weight_decay", c.weight_decay);
  k.get("epochs", c.epochs);
  k.get("batch_size", c.batch_size);
  k.get("steps", c.steps);
  k.get("warmup_steps", c.warmup_steps);
  k.get("checkpoint_every", c.checkpoint_every);
  k.get("seed", c.seed);
  if (const json* l = k.sub("loss")) from_json_strict(*l, c.loss, c.cams_weights);
  if (const json* m = k.sub("model")) from_json_strict(*m, c.model);
  if (const json* a = k.sub("augment")) from_json_strict(*a, c.augment);
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw model::ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw model::ConfigError(path + ": " + e.what());
  }
  return parse_train_config(j);
}

/// The effective configuration, suitable for writing next to a run's outputs.
inline json to_json(const TrainConfig& c) {
  json svp = json::array();
  for (const auto& stage : c.model.svp_table) {
    json branches = json::array();
    for (const auto& chain : stage) {
      json layers = json::array();
      for (const auto& l : chain) layers.push_back({l.kernel, l.dilation});
      branches.push_back(layers);
    }
    svp.push_back(branches);
  }
  json j = {{"lr_backbone", c.lr_backbone},
            {"lr_body", c.lr_body},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"checkpoint_every", c.checkpoint_every},
            {"seed", c.seed},
            {"loss",
             {{"lambda", c.loss.lambda},
              {"stage_weights", c.loss.stage_weights},
              {"output_weights", c.loss.output_weights},
              {"wce_m", c.loss.wce_m},
              {"cams_seed", c.loss.cams_seed}}},
            {"model",
             {{"input_h", c.model.input_h},
              {"input_w", c.model.input_w},
              {"unified_channels", c.model.unified_channels},
              {"backbone_widths", c.model.backbone_widths},
              {"bam_reduction", c.model.bam_reduction},
              {"seed", c.model.seed},
              {"use_svp", c.model.use_svp},
              {"use_ssp", c.model.use_ssp},
              {"use_bam", c.model.use_bam},
              {"svp_table", svp},
              {"ssp_ratio_table", c.model.ssp_ratio_table}}},
            {"augment",
             {{"p_zero", c.augment.p_zero},
              {"p_noise", c.augment.p_noise},
              {"gaussian_sigma", c.augment.gaussian_sigma},
              {"salt_pepper_fraction", c.augment.salt_pepper_fraction},
              {"uniform_amplitude", c.augment.uniform_amplitude},
              {"seed", c.augment.seed}}}};
  if (c.steps) j["steps"] = *c.steps;
  if (c.warmup_steps) j["warmup_steps"] = *c.warmup_steps;
  if (c.cams_weights) j["loss"]["cams_weights"] = *c.cams_weights;
  return j;
}

}  // namespace icanet::engine
