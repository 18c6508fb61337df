#pragma once

#include <string>

#include "stormadapt/detector.hpp"
#include "stormadapt/toyscenes.hpp"

namespace stormadapt {

// Ablation switches; names follow the standard run matrix.
struct ModeFlags {
  bool use_img = false;   // image-level adaptation head
  bool use_obj = false;   // object-level adaptation head
  bool adv = false;       // hardness-adaptive reversal (else fixed lambda0)
  bool use_reg = false;   // domain-level metric regularization
  bool use_dmp = false;   // dynamic masking of training images

  bool any_da() const { return use_img || use_obj || use_reg; }
};

// Recognized: source-only, dmp-only, img-grl, obj-grl, baseline,
// baseline-grl, advgrl, reg-grl, advgrl-reg, full.
ModeFlags mode_flags(const std::string& mode);
const std::vector<std::string>& ablation_modes();  // the nine-row matrix
const std::vector<std::string>& train_modes();     // the five-mode CLI set

// Training/run configuration, serialized as JSON with sections
// {data, model, train, advgrl, metricreg, dmp}.
struct RunConfig {
  // data
  std::string dataset_dir = "dataset";
  // model
  ModelConfig model;
  // train
  double lr1 = 0.01, lr2 = 0.001;
  int iters1 = 2000, iters2 = 800;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double gamma = 0.1;
  std::string mode = "full";
  bool cross_camera = false;
  std::uint64_t seed = 0;
  int checkpoint_interval = 500;
  // advgrl
  AdvGrlConfig advgrl;
  // metricreg
  double delta = 1.0;
  // dmp
  MaskSpec dmp;

  int total_iters() const { return iters1 + iters2; }
  double lr_at(int iter) const { return iter < iters1 ? lr1 : lr2; }

  std::string to_json_string() const;
  static RunConfig from_json_string(const std::string& text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
  void validate() const;
};

}  // namespace stormadapt
