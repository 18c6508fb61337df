#include "stormadapt/runconfig.hpp"

#include <fstream>

#include "json.hpp"

using json = nlohmann::json;

namespace stormadapt {

ModeFlags mode_flags(const std::string& mode) {
  ModeFlags f;
  if (mode == "source-only") return f;
  if (mode == "dmp-only") { f.use_dmp = true; return f; }
  if (mode == "img-grl") { f.use_img = true; return f; }
  if (mode == "obj-grl") { f.use_obj = true; return f; }
  if (mode == "baseline" || mode == "baseline-grl") {
    f.use_img = f.use_obj = true;
    return f;
  }
  if (mode == "advgrl") {
    f.use_img = f.use_obj = f.adv = true;
    return f;
  }
  if (mode == "reg-grl") {
    f.use_img = f.use_obj = f.use_reg = true;
    return f;
  }
  if (mode == "advgrl-reg") {
    f.use_img = f.use_obj = f.adv = f.use_reg = true;
    return f;
  }
  if (mode == "full") {
    f.use_img = f.use_obj = f.adv = f.use_reg = f.use_dmp = true;
    return f;
  }
  throw InputError("unknown mode: " + mode);
}

const std::vector<std::string>& ablation_modes() {
  static const std::vector<std::string> modes = {
      "source-only", "dmp-only", "img-grl",    "obj-grl", "baseline",
      "advgrl",      "reg-grl",  "advgrl-reg", "full"};
  return modes;
}

const std::vector<std::string>& train_modes() {
  static const std::vector<std::string> modes = {
      "source-only", "baseline-grl", "advgrl", "advgrl-reg", "full"};
  return modes;
}

namespace {

json model_to_json(const ModelConfig& m) {
  return json{{"image_size", m.image_size},
              {"class_count", m.class_count},
              {"ch1", m.ch1},
              {"ch2", m.ch2},
              {"ch3", m.ch3},
              {"feat_ch", m.feat_ch},
              {"roi_size", m.roi_size},
              {"rpn_hidden", m.rpn_hidden},
              {"anchor_scales", m.anchor_scales},
              {"proposal_cap", m.proposal_cap},
              {"rpn_nms_iou", m.rpn_nms_iou},
              {"img_head_hidden", m.img_head_hidden},
              {"obj_head_hidden", m.obj_head_hidden}};
}

void model_from_json(const json& j, ModelConfig& m) {
  m.image_size = j.value("image_size", m.image_size);
  m.class_count = j.value("class_count", m.class_count);
  m.ch1 = j.value("ch1", m.ch1);
  m.ch2 = j.value("ch2", m.ch2);
  m.ch3 = j.value("ch3", m.ch3);
  m.feat_ch = j.value("feat_ch", m.feat_ch);
  m.roi_size = j.value("roi_size", m.roi_size);
  m.rpn_hidden = j.value("rpn_hidden", m.rpn_hidden);
  if (j.contains("anchor_scales"))
    m.anchor_scales = j.at("anchor_scales").get<std::vector<double>>();
  m.proposal_cap = j.value("proposal_cap", m.proposal_cap);
  m.rpn_nms_iou = j.value("rpn_nms_iou", m.rpn_nms_iou);
  m.img_head_hidden = j.value("img_head_hidden", m.img_head_hidden);
  m.obj_head_hidden = j.value("obj_head_hidden", m.obj_head_hidden);
}

}  // namespace

std::string RunConfig::to_json_string() const {
  json j;
  j["data"] = {{"dataset_dir", dataset_dir}};
  j["model"] = model_to_json(model);
  j["train"] = {{"lr1", lr1},
                {"lr2", lr2},
                {"iters1", iters1},
                {"iters2", iters2},
                {"momentum", momentum},
                {"weight_decay", weight_decay},
                {"gamma", gamma},
                {"mode", mode},
                {"cross_camera", cross_camera},
                {"seed", seed},
                {"checkpoint_interval", checkpoint_interval}};
  j["advgrl"] = {{"lambda0", advgrl.lambda0},
                 {"alpha", advgrl.alpha},
                 {"beta", advgrl.beta}};
  j["metricreg"] = {{"delta", delta}};
  j["dmp"] = {{"patch_pixels", dmp.patch_pixels}};
  return j.dump(2);
}

RunConfig RunConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("invalid config JSON: ") + e.what());
  }
  RunConfig c;
  if (j.contains("data"))
    c.dataset_dir = j["data"].value("dataset_dir", c.dataset_dir);
  if (j.contains("model")) model_from_json(j["model"], c.model);
  if (j.contains("train")) {
    const json& t = j["train"];
    c.lr1 = t.value("lr1", c.lr1);
    c.lr2 = t.value("lr2", c.lr2);
    c.iters1 = t.value("iters1", c.iters1);
    c.iters2 = t.value("iters2", c.iters2);
    c.momentum = t.value("momentum", c.momentum);
    c.weight_decay = t.value("weight_decay", c.weight_decay);
    c.gamma = t.value("gamma", c.gamma);
    c.mode = t.value("mode", c.mode);
    c.cross_camera = t.value("cross_camera", c.cross_camera);
    c.seed = t.value("seed", c.seed);
    c.checkpoint_interval =
        t.value("checkpoint_interval", c.checkpoint_interval);
  }
  if (j.contains("advgrl")) {
    const json& a = j["advgrl"];
    c.advgrl.lambda0 = a.value("lambda0", c.advgrl.lambda0);
    c.advgrl.alpha = a.value("alpha", c.advgrl.alpha);
    c.advgrl.beta = a.value("beta", c.advgrl.beta);
  }
  if (j.contains("metricreg"))
    c.delta = j["metricreg"].value("delta", c.delta);
  if (j.contains("dmp"))
    c.dmp.patch_pixels = j["dmp"].value("patch_pixels", c.dmp.patch_pixels);
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config file not found: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json_string(text);
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write config snapshot: " + path);
  out << to_json_string() << "\n";
}

void RunConfig::validate() const {
  if (dataset_dir.empty()) throw InputError("data: dataset_dir must be set");
  if (iters1 <= 0 || iters2 <= 0)
    throw InputError("train: iteration counts must be > 0");
  if (lr1 <= 0 || lr2 <= 0) throw InputError("train: learning rates must be > 0");
  if (gamma < 0) throw InputError("train: gamma must be >= 0");
  if (delta <= 0) throw InputError("metricreg: delta must be > 0");
  advgrl.validate();
  dmp.validate();
  mode_flags(mode);  // throws on unknown mode
}

}  // namespace stormadapt
