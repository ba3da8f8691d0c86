// icanet: train / eval / predict / gradcheck / synth.
//
// Exit status: 0 success, 1 usage or input error, 2 numeric failure
// (non-finite loss, failed gradient check).

#include <iostream>

#include <CLI11.hpp>

#include "icanet/engine/commands.hpp"

using namespace icanet;

int main(int argc, char** argv) {
  CLI::App app{"RGB-thermal salient object detection: training, evaluation and export"};
  app.require_subcommand(1);

  std::string config, data_path, out, ckpt, report, input, spec;
  std::size_t eval_batch = 1;

  auto* train = app.add_subcommand("train", "train a model; writes final.ckpt, loss_log.csv, config.json");
  train->add_option("--config", config, "training config (JSON)")->required();
  train->add_option("--data", data_path, "manifest file or RGB/T/GT directory")->required();
  train->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes per_image.csv, curves.csv, summary.txt");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval->add_option("--data", data_path, "manifest file or RGB/T/GT directory")->required();
  eval->add_option("--report", report, "report directory")->required();
  eval->add_option("--batch", eval_batch, "evaluation batch size")->check(CLI::PositiveNumber);

  auto* pred = app.add_subcommand("predict", "write 8-bit saliency maps named <id>.png");
  pred->add_option("--ckpt", ckpt, "checkpoint")->required();
  pred->add_option("--input", input, "manifest, RGB/T/GT directory, or 'rgb.png,thermal.png'")->required();
  pred->add_option("--out", out, "output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter group (ICANET_PRECISION=32|64)");
  gc->add_option("--config", config, "config with a tiny model section")->required();

  auto* synth = app.add_subcommand("synth", "generate synthetic RGB/T/GT fixtures and manifest.tsv");
  synth->add_option("--spec", spec, "JSON with count, height, width, seed")->required();
  synth->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? engine::kExitOk : engine::kExitUsage;
  }

  try {
    if (*train) {
      const auto r = engine::train_command(config, data_path, out, std::cout);
      std::cout << "trained " << r.steps << " steps; total " << r.first_total << " -> " << r.last_total << "\n"
                << "checkpoint " << r.checkpoint << "\n";
    } else if (*eval) {
      engine::eval_command(ckpt, data_path, report, std::cout, eval_batch);
    } else if (*pred) {
      for (const auto& p : engine::predict_command(ckpt, input, out)) std::cout << p << "\n";
    } else if (*gc) {
      const auto r = engine::gradcheck_command(config, engine::precision_from_env(), std::cout);
      return r.pass ? engine::kExitOk : engine::kExitNumeric;
    } else if (*synth) {
      const auto entries = engine::synth_command(engine::load_synth_spec(spec), out);
      std::cout << "wrote " << entries.size() << " pairs to " << out << "\n";
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return engine::kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return engine::kExitUsage;
  }
  return engine::kExitOk;
}
