// tools/conseg.cpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABILITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Command-line entry point. One subcommand per workflow: synthetic data
// generation, class-prior statistics, training, evaluation, prediction with
// error overlays, and the annotation blind-spot bias report. Settings come
// from an optional key=value config file, amended by repeatable --set
// overrides; every run writes the resolved configuration next to its
// outputs so it can be reproduced exactly.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conseg/blindspot.hpp"
#include "conseg/config.hpp"
#include "conseg/data.hpp"
#include "conseg/errors.hpp"
#include "conseg/losses.hpp"
#include "conseg/metrics.hpp"
#include "conseg/model.hpp"
#include "conseg/rng.hpp"
#include "conseg/trainer.hpp"

namespace fs = std::filesystem;

namespace {

// flags shared by every subcommand
struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string seed;  // raw text; empty when the flag was not given
};

void AddCommonFlags(CLI::App *cmd, CommonArgs *args, bool with_seed,
                    bool out_required) {
  cmd->add_option("--config", args->config_path,
                  "key=value configuration file");
  cmd->add_option("--set", args->overrides,
                  "override one configuration key (KEY=VALUE, repeatable)");
  auto *out = cmd->add_option("--out", args->out_dir,
                              "directory for all outputs");
  if (out_required) out->required();
  if (with_seed)
    cmd->add_option("--seed", args->seed,
                    "seed for this run (shorthand for the subcommand's "
                    "seed key)");
}

// file, then --set overrides, then the --seed shorthand; keys checked last
conseg::KeyValueConfig ResolveConfig(const CommonArgs &args,
                                     const std::string &seed_key) {
  conseg::KeyValueConfig kv;
  if (!args.config_path.empty())
    kv = conseg::KeyValueConfig::FromFile(args.config_path);
  for (const auto &line : args.overrides) kv.SetLine(line);
  if (!args.seed.empty() && !seed_key.empty()) kv.Set(seed_key, args.seed);
  conseg::RequireKnownKeys(kv);
  return kv;
}

void WriteOutputFile(const std::string &path, const std::string &content) {
  std::ofstream f(path);
  if (!f) throw conseg::InputError("cannot write output file: " + path);
  f << content;
}

void WriteResolvedConfig(const conseg::KeyValueConfig &kv,
                         const std::string &out_dir) {
  fs::create_directories(out_dir);
  WriteOutputFile((fs::path(out_dir) / "resolved-config.txt").string(),
                  kv.Serialize());
}

// the training subset rule shared by train, eval and prior-stats: a subset
// size of zero trains on everything and holds nothing out
conseg::TrainingSubset SubsetOf(const conseg::DatasetSplit &split,
                                const conseg::DataOptions &opt) {
  if (opt.subset_per_pipe > 0)
    return conseg::SelectTrainingSubset(split, opt.subset_per_pipe,
                                        opt.subset_seed);
  conseg::TrainingSubset sub;
  sub.train = split;
  sub.heldout.tile_size = split.tile_size;
  return sub;
}

conseg::DatasetSplit LoadRoot(const conseg::DataOptions &opt) {
  if (opt.root.empty())
    throw conseg::ConfigError("data.root: a dataset directory is required");
  return conseg::LoadDataset(opt.root);
}

conseg::ClassPrior PriorOfSplit(const conseg::DatasetSplit &split) {
  std::vector<conseg::LabelMask> masks;
  for (const auto &t : split.labelled) masks.push_back(t.mask);
  return conseg::ComputeClassPrior(masks);
}

int RunSynth(const CommonArgs &args) {
  conseg::KeyValueConfig kv = ResolveConfig(args, "synth.seed");
  const conseg::SynthConfig cfg = conseg::SynthFromConfig(kv);

  conseg::KeyValueConfig resolved;
  conseg::WriteSynthConfig(cfg, &resolved);
  WriteResolvedConfig(resolved, args.out_dir);

  const conseg::DatasetSplit split =
      conseg::GenerateSynthetic(cfg, args.out_dir);

  std::uint64_t aggregate = 0, total = 0;
  for (const auto &t : split.labelled) {
    for (auto v : t.mask.v) aggregate += v;
    total += t.mask.size();
  }
  std::printf("generated %zu labelled and %zu unlabelled tiles under %s\n",
              split.labelled.size(), split.unlabelled.size(),
              args.out_dir.c_str());
  std::printf("labelled aggregate fraction %.4f (target %.4f)\n",
              static_cast<double>(aggregate) / static_cast<double>(total),
              cfg.target_minority_fraction);
  return 0;
}

int RunPriorStats(const CommonArgs &args) {
  conseg::KeyValueConfig kv = ResolveConfig(args, "data.subset_seed");
  const conseg::DataOptions data = conseg::DataFromConfig(kv);

  const conseg::DatasetSplit split = LoadRoot(data);
  const conseg::TrainingSubset sub = SubsetOf(split, data);
  const conseg::ClassPrior prior = PriorOfSplit(sub.train);

  std::ostringstream table;
  table << "class,mu,sigma\n";
  table << "aggregate," << conseg::detail::FormatDouble(prior.mu[0]) << ","
        << conseg::detail::FormatDouble(prior.sigma[0]) << "\n";
  table << "suspension," << conseg::detail::FormatDouble(prior.mu[1]) << ","
        << conseg::detail::FormatDouble(prior.sigma[1]) << "\n";
  std::fputs(table.str().c_str(), stdout);

  if (!args.out_dir.empty()) {
    conseg::KeyValueConfig resolved;
    conseg::WriteDataOptions(data, &resolved);
    WriteResolvedConfig(resolved, args.out_dir);
    WriteOutputFile((fs::path(args.out_dir) / "prior.csv").string(),
                    table.str());
  }
  return 0;
}

int RunTrain(const CommonArgs &args) {
  conseg::KeyValueConfig kv = ResolveConfig(args, "train.seed");
  const conseg::ArchConfig arch = conseg::ArchFromConfig(kv);
  const conseg::TrainConfig train = conseg::TrainFromConfig(kv);
  const conseg::DataOptions data = conseg::DataFromConfig(kv);

  conseg::KeyValueConfig resolved;
  conseg::WriteArchConfig(arch, &resolved);
  conseg::WriteTrainConfig(train, &resolved);
  conseg::WriteDataOptions(data, &resolved);
  WriteResolvedConfig(resolved, args.out_dir);

  const conseg::DatasetSplit split = LoadRoot(data);
  const conseg::TrainingSubset sub = SubsetOf(split, data);
  const conseg::ClassPrior prior = PriorOfSplit(sub.train);

  conseg::ResSepNet<float> net(arch);
  conseg::InitializeWeights(&net, train.seed);
  std::printf("training variant %s: %zu labelled, %zu unlabelled tiles, "
              "%zu inference parameters\n",
              conseg::VariantName(train.variant).c_str(),
              sub.train.labelled.size(), sub.train.unlabelled.size(),
              net.CountParameters(conseg::Scope::kInference));

  auto outcome = conseg::Fit(&net, sub.train, prior, train);
  for (const auto &r : outcome.history.records)
    std::printf("epoch %d total %.6f lr %g (%.1fs)\n", r.epoch, r.loss_total,
                r.lr, r.seconds);

  conseg::WriteHistory(outcome.history,
                       (fs::path(args.out_dir) / "history.jsonl").string());
  net.Save((fs::path(args.out_dir) / "final.ckpt").string());
  conseg::RestoreParams(&net, outcome.best_params);
  net.Save((fs::path(args.out_dir) / "best.ckpt").string());
  std::printf("best epoch %d (loss %.6f); checkpoints written to %s\n",
              outcome.best_epoch, outcome.best_loss, args.out_dir.c_str());
  return 0;
}

int RunEval(const CommonArgs &args) {
  conseg::KeyValueConfig kv = ResolveConfig(args, "data.subset_seed");
  const conseg::DataOptions data = conseg::DataFromConfig(kv);
  const std::string ckpt = kv.GetString("eval.checkpoint", "");
  const std::string variant = kv.GetString("eval.variant", "model");
  const std::string setup = kv.GetString("eval.setup", "heldout");
  if (ckpt.empty())
    throw conseg::ConfigError("eval.checkpoint: a checkpoint is required");

  conseg::KeyValueConfig resolved;
  conseg::WriteDataOptions(data, &resolved);
  resolved.Set("eval.checkpoint", ckpt);
  resolved.Set("eval.variant", variant);
  resolved.Set("eval.setup", setup);
  WriteResolvedConfig(resolved, args.out_dir);

  const conseg::DatasetSplit split = LoadRoot(data);
  const conseg::TrainingSubset sub = SubsetOf(split, data);
  // with no subset rule every labelled tile is the evaluation set
  const auto &tiles = data.subset_per_pipe > 0 ? sub.heldout.labelled
                                               : split.labelled;

  conseg::ResSepNet<float> net = conseg::ResSepNet<float>::Load(ckpt);
  const conseg::ConfusionCounts counts =
      conseg::EvaluateCheckpoint(&net, tiles);

  const std::string csv = conseg::MetricsCsvHeader() + "\n" +
                          conseg::MetricsCsvRow(variant, setup, counts) +
                          "\n";
  WriteOutputFile((fs::path(args.out_dir) / "metrics.csv").string(), csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

int RunPredict(const CommonArgs &args) {
  conseg::KeyValueConfig kv = ResolveConfig(args, "");
  const std::string ckpt = kv.GetString("predict.checkpoint", "");
  const std::string images = kv.GetString("predict.images", "");
  const std::string masks = kv.GetString("predict.masks", "");
  if (ckpt.empty())
    throw conseg::ConfigError("predict.checkpoint: a checkpoint is required");
  if (images.empty())
    throw conseg::ConfigError("predict.images: an image directory is "
                              "required");

  conseg::KeyValueConfig resolved;
  resolved.Set("predict.checkpoint", ckpt);
  resolved.Set("predict.images", images);
  if (!masks.empty()) resolved.Set("predict.masks", masks);
  WriteResolvedConfig(resolved, args.out_dir);

  conseg::ResSepNet<float> net = conseg::ResSepNet<float>::Load(ckpt);

  const fs::path mask_dir = fs::path(args.out_dir) / "masks";
  const fs::path overlay_dir = fs::path(args.out_dir) / "overlays";
  fs::create_directories(mask_dir);
  if (!masks.empty()) fs::create_directories(overlay_dir);

  int produced = 0;
  for (const std::string &name : conseg::detail::ListPngNames(images)) {
    const conseg::Tensor<float> img =
        conseg::ReadImageTile((fs::path(images) / name).string());
    auto out = net.ForwardMain(img, /*train=*/false);
    const auto pred = conseg::Binarize(out.y, 0.5);
    conseg::WriteMaskFile((mask_dir / name).string(), pred[0]);

    if (!masks.empty()) {
      const conseg::LabelMask ref =
          conseg::ReadMaskFile((fs::path(masks) / name).string());
      if (ref.h != img.h() || ref.w != img.w())
        throw conseg::DatasetError("mask size does not match image: " + name);
      // error overlay: missed aggregate pixels in blue, false aggregate
      // detections in red, everything else keeps the input image
      conseg::Tensor<float> overlay = img;
      const std::size_t npix =
          static_cast<std::size_t>(img.h()) * img.w();
      float *r = overlay.Plane(0, 0);
      float *g = overlay.Plane(0, 1);
      float *b = overlay.Plane(0, 2);
      for (std::size_t i = 0; i < npix; ++i) {
        const bool fn = ref.v[i] == 1 && pred[0].v[i] == 0;
        const bool fp = ref.v[i] == 0 && pred[0].v[i] == 1;
        if (fn) {
          r[i] = 0.0f;
          g[i] = 0.0f;
          b[i] = 1.0f;
        } else if (fp) {
          r[i] = 1.0f;
          g[i] = 0.0f;
          b[i] = 0.0f;
        }
      }
      conseg::WriteImageTile((overlay_dir / name).string(), overlay);
    }
    ++produced;
  }
  if (produced == 0)
    throw conseg::DatasetError("no .png images found under " + images);
  std::printf("wrote %d prediction masks to %s\n", produced,
              mask_dir.string().c_str());
  return 0;
}

int RunBlindspot(const CommonArgs &args) {
  conseg::KeyValueConfig kv = ResolveConfig(args, "blindspot.seed");
  const conseg::BlindspotOptions opt = conseg::BlindspotFromConfig(kv);

  conseg::KeyValueConfig resolved;
  conseg::WriteBlindspotOptions(opt, &resolved);
  WriteResolvedConfig(resolved, args.out_dir);

  conseg::SimulationResult sim;
  const bool simulated = opt.trials > 0;
  if (simulated) {
    conseg::Rng rng(opt.seed);
    sim = conseg::SimulateBlindSpot(opt.model, opt.trials, &rng);
  }
  const std::vector<conseg::BiasRow> rows =
      conseg::BiasReport(opt.model, simulated ? &sim : nullptr);

  std::ostringstream csv;
  csv << "class,prior,analytic_p,empirical_p,std_error,ratio\n";
  for (const auto &row : rows) {
    csv << row.class_index << ","
        << conseg::detail::FormatDouble(row.prior) << ","
        << conseg::detail::FormatDouble(row.analytic_p) << ",";
    csv << (row.empirical_p ? conseg::detail::FormatDouble(*row.empirical_p)
                            : "undefined")
        << ",";
    csv << (row.std_error ? conseg::detail::FormatDouble(*row.std_error)
                          : "undefined")
        << ",";
    csv << (row.ratio ? conseg::detail::FormatDouble(*row.ratio)
                      : "undefined")
        << "\n";
  }
  WriteOutputFile((fs::path(args.out_dir) / "bias.csv").string(), csv.str());
  std::fputs(csv.str().c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"semi-supervised concrete aggregate segmentation toolkit"};
  app.require_subcommand(1);

  CommonArgs synth_args, prior_args, train_args, eval_args, predict_args,
      blindspot_args;
  auto *synth = app.add_subcommand("synth", "generate a synthetic dataset");
  AddCommonFlags(synth, &synth_args, true, true);
  auto *prior = app.add_subcommand("prior-stats",
                                   "class-prior statistics of a dataset");
  AddCommonFlags(prior, &prior_args, true, false);
  auto *train = app.add_subcommand("train", "fit a segmentation model");
  AddCommonFlags(train, &train_args, true, true);
  auto *eval = app.add_subcommand("eval",
                                  "evaluate a checkpoint on held-out tiles");
  AddCommonFlags(eval, &eval_args, true, true);
  auto *predict = app.add_subcommand("predict",
                                     "write prediction masks and overlays");
  AddCommonFlags(predict, &predict_args, false, true);
  auto *blindspot = app.add_subcommand(
      "blindspot", "annotation blind-spot bias report");
  AddCommonFlags(blindspot, &blindspot_args, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 2;
  }

  try {
    if (synth->parsed()) return RunSynth(synth_args);
    if (prior->parsed()) return RunPriorStats(prior_args);
    if (train->parsed()) return RunTrain(train_args);
    if (eval->parsed()) return RunEval(eval_args);
    if (predict->parsed()) return RunPredict(predict_args);
    if (blindspot->parsed()) return RunBlindspot(blindspot_args);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  std::cerr << "usage error: no subcommand given" << std::endl;
  return 2;
}
