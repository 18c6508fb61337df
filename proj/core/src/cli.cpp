#include "stormadapt/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "stormadapt/evalrun.hpp"

namespace fs = std::filesystem;

namespace stormadapt {

namespace {

// STORMADAPT_OUT re-roots relative output paths; absolute paths win.
std::string resolve_out(const std::string& path) {
  if (fs::path(path).is_absolute()) return path;
  const char* root = std::getenv("STORMADAPT_OUT");
  if (!root || !*root) return path;
  return (fs::path(root) / path).string();
}

// "<dir>/<split>_manifest.json" -> (dir, split)
std::pair<std::string, std::string> split_manifest_path(
    const std::string& manifest) {
  const fs::path p(manifest);
  const std::string name = p.filename().string();
  const std::string suffix = "_manifest.json";
  if (name.size() <= suffix.size() ||
      name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
    throw InputError("manifest path must end in _manifest.json: " + manifest);
  std::string dir = p.parent_path().string();
  if (dir.empty()) dir = ".";
  return {dir, name.substr(0, name.size() - suffix.size())};
}

Detector load_detector(const std::string& checkpoint,
                       const std::string& config_path, std::uint64_t seed) {
  ModelConfig mc;
  if (!config_path.empty()) mc = RunConfig::load(config_path).model;
  Detector det;
  det.init(mc, seed);
  load_checkpoint(checkpoint, det, nullptr);
  return det;
}

int cmd_synth(const SynthDatasetOptions& opt) {
  SynthDatasetOptions o = opt;
  o.out_dir = resolve_out(opt.out_dir);
  synth_dataset(o);
  std::cout << "wrote " << o.n_train << " train / " << o.n_val
            << " val samples to " << o.out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& mode,
              bool have_seed, std::uint64_t seed, const std::string& out,
              bool resume) {
  RunConfig cfg = RunConfig::load(config_path);
  if (!mode.empty()) cfg.mode = mode;  // flag overrides beat the file
  if (have_seed) cfg.seed = seed;
  const std::string out_dir = resolve_out(out);
  const TrainResult res = train(cfg, out_dir, resume);
  std::cout << "trained " << res.iterations_run << " iterations; checkpoint "
            << res.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest,
             const std::string& levels, const std::string& out,
             const std::string& config_path) {
  const auto [dir, split] = split_manifest_path(manifest);
  TripletDataset ds(dir, split);
  Detector det = load_detector(checkpoint, config_path, 0);

  std::vector<EvalRow> rows;
  rows.push_back(evaluate_condition(det, ds, ""));
  const std::string tgt = weather_name(ds.target_weather());
  std::stringstream ss(levels);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    level_from_name(item);  // validates the name
    rows.push_back(evaluate_condition(det, ds, tgt + "_" + item));
  }
  const std::string out_path = resolve_out(out);
  write_eval_csv(rows, ds.scene().class_names(), out_path);
  for (const auto& row : rows)
    std::cout << row.condition << " mAP " << row.map << "\n";
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_diagnose(const std::string& checkpoint, const std::string& manifest,
                 const std::string& out, const std::string& config_path) {
  const auto [dir, split] = split_manifest_path(manifest);
  TripletDataset ds(dir, split);
  Detector det = load_detector(checkpoint, config_path, 0);
  const DiagnoseResult res = diagnose(det, ds, resolve_out(out));
  std::cout << "ordering_rate " << res.ordering << "\n"
            << "wrote " << res.distances_csv << ", " << res.hardness_csv
            << ", " << res.projection_csv << "\n";
  return 0;
}

int cmd_ablate(const std::string& dataset, const std::string& modes,
               int seeds, const std::string& out,
               const std::string& config_path) {
  std::vector<std::string> mode_list;
  if (modes == "all") {
    mode_list = train_modes();
  } else {
    std::stringstream ss(modes);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) {
        mode_flags(item);  // validates the name
        mode_list.push_back(item);
      }
  }
  if (mode_list.empty() || seeds < 1)
    throw InputError("ablate needs at least one mode and one seed");

  RunConfig base;
  if (!config_path.empty()) base = RunConfig::load(config_path);
  base.dataset_dir = dataset;

  const std::string out_dir = resolve_out(out);
  fs::create_directories(out_dir);
  const std::string summary_path =
      (fs::path(out_dir) / "summary.csv").string();
  std::ofstream summary(summary_path);
  if (!summary) throw InputError("cannot write " + summary_path);
  summary << "mode,seed,map_clear,map_target\n";

  TripletDataset val(dataset, "val");
  const std::string tgt_key =
      std::string(weather_name(val.target_weather())) + "_large";

  for (const auto& mode : mode_list) {
    for (int s = 0; s < seeds; ++s) {
      RunConfig cfg = base;
      cfg.mode = mode;
      cfg.seed = base.seed + static_cast<std::uint64_t>(s);
      const std::string run_dir =
          (fs::path(out_dir) / (mode + "_seed" + std::to_string(s))).string();
      const TrainResult res = train(cfg, run_dir);

      Detector det;
      det.init(cfg.model, cfg.seed);
      load_checkpoint(res.checkpoint_path, det, nullptr);
      const EvalRow clear = evaluate_condition(det, val, "");
      const EvalRow target = evaluate_condition(det, val, tgt_key);
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s,%llu,%.17g,%.17g\n", mode.c_str(),
                    static_cast<unsigned long long>(cfg.seed), clear.map,
                    target.map);
      summary << buf;
      summary.flush();
      std::cout << mode << " seed " << cfg.seed << ": clear " << clear.map
                << ", target " << target.map << "\n";
    }
  }
  std::cout << "wrote " << summary_path << "\n";
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"domain-adaptive toy object detection for adverse weather"};
  app.require_subcommand(1);

  // synth-dataset
  auto* synth = app.add_subcommand("synth-dataset",
                                   "generate an annotated toy dataset");
  SynthDatasetOptions sopt;
  std::string starget = "fog", sfog = "large", srain = "large";
  synth->add_option("--n-train", sopt.n_train, "train sample count");
  synth->add_option("--n-val", sopt.n_val, "val sample count");
  synth->add_option("--target", starget, "target weather: fog|rain");
  synth->add_option("--seed", sopt.seed, "dataset seed");
  synth->add_option("--out-dir", sopt.out_dir, "output directory");
  synth->add_option("--fog-level", sfog, "fog intensity: small|medium|large");
  synth->add_option("--rain-level", srain,
                    "rain intensity: small|medium|large");

  // train
  auto* tr = app.add_subcommand("train", "train a detector from a config");
  std::string t_config, t_mode, t_out = "train_run";
  std::uint64_t t_seed = 0;
  bool t_resume = false;
  tr->add_option("--config", t_config, "run config JSON")->required();
  auto* mode_opt = tr->add_option(
      "--mode", t_mode,
      "training mode: source-only|baseline-grl|advgrl|advgrl-reg|full");
  auto* seed_opt = tr->add_option("--seed", t_seed, "training seed");
  tr->add_option("--out", t_out, "output directory");
  tr->add_flag("--resume", t_resume, "resume from the last checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string e_ckpt, e_manifest, e_levels = "small,medium,large";
  std::string e_out = "table.csv", e_config;
  ev->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  ev->add_option("--manifest", e_manifest, "split manifest JSON")->required();
  ev->add_option("--levels", e_levels, "comma list of intensity levels");
  ev->add_option("--out", e_out, "results CSV path");
  ev->add_option("--config", e_config, "run config JSON (model section)");

  // diagnose
  auto* di = app.add_subcommand("diagnose", "feature-space diagnostics");
  std::string d_ckpt, d_manifest, d_out = "diagnostics", d_config;
  di->add_option("--checkpoint", d_ckpt, "checkpoint file")->required();
  di->add_option("--manifest", d_manifest, "split manifest JSON")->required();
  di->add_option("--out", d_out, "output directory");
  di->add_option("--config", d_config, "run config JSON (model section)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the ablation matrix");
  std::string a_dataset, a_modes = "all", a_out = "ablation", a_config;
  int a_seeds = 3;
  ab->add_option("--dataset", a_dataset, "dataset directory")->required();
  ab->add_option("--modes", a_modes, "'all' or a comma list of mode names");
  ab->add_option("--seeds", a_seeds, "seeds per mode");
  ab->add_option("--out", a_out, "output directory");
  ab->add_option("--config", a_config, "base run config JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints usage, returns 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) {
      sopt.target = weather_from_name(starget);
      sopt.fog_level = level_from_name(sfog);
      sopt.rain_level = level_from_name(srain);
      return cmd_synth(sopt);
    }
    if (*tr) {
      if (!t_mode.empty()) {
        const auto& allowed = train_modes();
        if (std::find(allowed.begin(), allowed.end(), t_mode) == allowed.end())
          throw InputError("--mode must be one of the five training modes");
      }
      return cmd_train(t_config, t_mode, seed_opt->count() > 0, t_seed, t_out,
                       t_resume);
    }
    if (*ev) return cmd_eval(e_ckpt, e_manifest, e_levels, e_out, e_config);
    if (*di) return cmd_diagnose(d_ckpt, d_manifest, d_out, d_config);
    if (*ab) return cmd_ablate(a_dataset, a_modes, a_seeds, a_out, a_config);
    (void)mode_opt;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace stormadapt
