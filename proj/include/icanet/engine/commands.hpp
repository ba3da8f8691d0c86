#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "icanet/engine/evaluate.hpp"
#include "icanet/engine/gradcheck.hpp"
#include "icanet/engine/trainer.hpp"
#include "icanet/metrics/report.hpp"

namespace icanet::engine {

namespace fs = std::filesystem;

/// Bad invocation or input (exit status 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw data::IoError("cannot create directory " + dir);
}

inline std::string loss_log_header() { return "step,epoch,lr_backbone,lr_body,bce,iou,content,total,c2,c3,c4,c5\n"; }

inline std::string loss_log_row(const StepLog& l) {
  std::string s = std::to_string(l.step) + "," + std::to_string(l.epoch) + "," + metrics::detail::num(l.lr_backbone) +
                  "," + metrics::detail::num(l.lr_body);
  for (double v : {l.report.bce, l.report.iou, l.report.content, l.report.total}) s += "," + metrics::detail::num(v);
  for (double v : l.report.content_terms) s += "," + metrics::detail::num(v);
  return s + "\n";
}

}  // namespace detail

struct TrainResult {
  std::string checkpoint;
  std::size_t steps = 0;
  double first_total = 0.0;
  double last_total = 0.0;
};

/// train --config --data --out: writes config.json, loss_log.csv, final.ckpt
/// (and step_<k>.ckpt every checkpoint_every steps).
inline TrainResult train_command(const std::string& config_path, const std::string& data_path, const std::string& out_dir,
                                 std::ostream& log) {
  const TrainConfig cfg = load_train_config(config_path);
  const auto manifest = data::load_manifest(data_path);
  std::vector<data::SamplePair> pairs;
  for (const auto& e : manifest.entries) pairs.push_back(data::load_pair(e, cfg.model.input_h, cfg.model.input_w));
  Trainer trainer(cfg, std::move(pairs));

  detail::ensure_dir(out_dir);
  const fs::path out(out_dir);
  metrics::detail::write_file((out / "config.json").string(), to_json(cfg).dump(2) + "\n");
  std::ofstream csv(out / "loss_log.csv");
  if (!csv) throw data::IoError("cannot write " + (out / "loss_log.csv").string());
  csv << detail::loss_log_header();

  TrainResult res;
  trainer.run([&](const StepLog& l) {
    csv << detail::loss_log_row(l);
    if (l.step == 0) res.first_total = l.report.total;
    res.last_total = l.report.total;
    const std::size_t done = l.step + 1;
    if (done % 10 == 0 || done == trainer.total_steps()) {
      log << "step " << done << "/" << trainer.total_steps() << "  total " << l.report.total << "\n";
    }
    if (cfg.checkpoint_every && done % cfg.checkpoint_every == 0 && done != trainer.total_steps()) {
      trainer.save((out / ("step_" + std::to_string(done) + ".ckpt")).string());
    }
  });
  res.steps = trainer.step_count();
  res.checkpoint = (out / "final.ckpt").string();
  trainer.save(res.checkpoint);
  return res;
}

/// eval --ckpt --data --report
inline metrics::MetricsReport eval_command(const std::string& ckpt, const std::string& data_path,
                                           const std::string& report_dir, std::ostream& log, std::size_t batch = 1) {
  auto net = load_model(ckpt);
  const auto manifest = data::load_manifest(data_path, data::Split::test);
  const auto report = evaluate(net, manifest, batch);
  detail::ensure_dir(report_dir);
  metrics::write_reports(report, report_dir);
  log << metrics::summary_table(report);
  return report;
}

/// The --input of predict: a manifest file, a dataset directory, or "rgb_path,thermal_path".
inline std::vector<data::ManifestEntry> predict_inputs(const std::string& input) {
  const auto comma = input.find(',');
  if (comma == std::string::npos) return data::load_manifest(input, data::Split::test).entries;
  data::ManifestEntry e;
  e.rgb = input.substr(0, comma);
  e.thermal = input.substr(comma + 1);
  if (e.rgb.empty() || e.thermal.empty() || e.thermal.find(',') != std::string::npos) {
    throw UsageError("predict: --input pair must be 'rgb_path,thermal_path'");
  }
  e.id = fs::path(e.rgb).stem().string();
  return {e};
}

inline std::vector<std::string> predict_command(const std::string& ckpt, const std::string& input,
                                                const std::string& out_dir) {
  auto net = load_model(ckpt);
  return predict(net, predict_inputs(input), out_dir);
}

/// Numeric width of the gradient check: ICANET_PRECISION=32 (default) or 64.
inline int precision_from_env() {
  const char* v = std::getenv("ICANET_PRECISION");
  if (!v || !*v) return 32;
  const std::string s(v);
  if (s == "32") return 32;
  if (s == "64") return 64;
  throw UsageError("ICANET_PRECISION must be 32 or 64, got '" + s + "'");
}

inline std::string format_gradcheck(const GradCheckReport& r, int precision) {
  std::string out = "precision " + std::to_string(precision) + "  threshold " + metrics::detail::num(r.threshold) +
                    "  probes " + std::to_string(r.probes) + "\n";
  char buf[256];
  for (const auto& g : r.groups) {
    if (g.frozen) {
      std::snprintf(buf, sizeof buf, "%-16s %s  tensors %3zu  frozen, max |grad| %.3e\n", g.group.c_str(),
                    g.pass ? "PASS" : "FAIL", g.tensors, g.max_abs_grad);
    } else {
      std::snprintf(buf, sizeof buf, "%-16s %s  tensors %3zu  checked %3zu  skipped %2zu  max rel err %.3e  (%s)\n",
                    g.group.c_str(), g.pass ? "PASS" : "FAIL", g.tensors, g.checked, g.skipped, g.max_rel_err,
                    g.worst.c_str());
    }
    out += buf;
  }
  out += r.pass ? "gradcheck: PASS\n" : "gradcheck: FAIL\n";
  return out;
}

/// gradcheck --config: model and loss sections of a training config. The
/// model must be within the tiny envelope (<= 32x32 input, <= 8 channels).
/// Thresholds: 1e-3 at 32 bits, 1e-5 at 64 bits.
inline GradCheckReport gradcheck_command(const std::string& config_path, int precision, std::ostream& log,
                                         std::optional<double> threshold = {}) {
  const TrainConfig cfg = load_train_config(config_path);
  const auto& m = cfg.model;
  std::size_t widest = m.unified_channels;
  for (auto w : m.backbone_widths) widest = std::max(widest, w);
  if (m.input_h > 32 || m.input_w > 32 || widest > 8) {
    throw UsageError("gradcheck: needs the tiny envelope (input <= 32x32, channels <= 8)");
  }
  m.validate();
  GradCheckOptions opt;
  opt.model = m;
  opt.loss = cfg.loss;
  opt.threshold = threshold ? *threshold : (precision == 64 ? 1e-5 : 1e-3);
  GradCheckReport r;
  if (precision == 64) {
    r = gradcheck_pipeline<double>(opt);
  } else if (precision == 32) {
    r = gradcheck_pipeline<float>(opt);
  } else {
    throw UsageError("gradcheck: precision must be 32 or 64");
  }
  log << format_gradcheck(r, precision);
  return r;
}

struct SynthOptions {
  std::size_t count = 8;
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint32_t seed = 1;
};

inline SynthOptions load_synth_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open synth spec " + path);
  SynthOptions o;
  try {
    const json j = json::parse(f);
    detail::KeyChecker k(j, "synth");
    k.get("count", o.count);
    k.get("height", o.height);
    k.get("width", o.width);
    k.get("seed", o.seed);
  } catch (const json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
  if (o.count == 0 || o.height < 8 || o.width < 8) throw UsageError("synth: need count >= 1 and extents >= 8");
  return o;
}

/// synth --spec --out: RGB/, T/, GT/ PNGs plus manifest.tsv with relative paths.
inline std::vector<data::ManifestEntry> synth_command(const SynthOptions& o, const std::string& out_dir) {
  const fs::path out(out_dir);
  for (const char* sub : {"RGB", "T", "GT"}) detail::ensure_dir((out / sub).string());
  Rng rng({o.seed, 0x53594eu});
  std::vector<data::ManifestEntry> rel;
  for (std::size_t i = 0; i < o.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", i);
    const auto p = data::synth_pair(data::random_synth_spec(o.height, o.width, rng), rng, id);
    const std::string name = std::string(id) + ".png";
    data::write_image((out / "RGB" / name).string(), p.rgb);
    data::write_image((out / "T" / name).string(), p.thermal);
    data::write_image((out / "GT" / name).string(), p.gt);
    rel.push_back({"RGB/" + name, "T/" + name, "GT/" + name, id});
  }
  data::write_manifest((out / "manifest.tsv").string(), rel);
  return rel;
}

}  // namespace icanet::engine
