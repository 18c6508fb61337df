#include "stormadapt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace stormadapt {

namespace {

// ROI-head classification (mean CE) and regression (smooth L1 over positive
// matches, normalized by positive count). Gradients go into the traces.
void det_losses(std::vector<DetHead::Trace>& traces, const RoiTargets& targets,
                int class_count, bool with_grad, real* l_cls, real* l_reg) {
  *l_cls = 0;
  *l_reg = 0;
  if (traces.empty()) return;
  const real inv_r = 1.0 / static_cast<real>(traces.size());
  int n_pos = 0;
  for (int lab : targets.labels)
    if (lab < class_count) ++n_pos;
  const real inv_pos = n_pos > 0 ? 1.0 / static_cast<real>(n_pos) : 0.0;

  for (std::size_t j = 0; j < traces.size(); ++j) {
    std::vector<real> dlogits;
    *l_cls += inv_r * softmax_ce(traces[j].cls_logits.data, targets.labels[j],
                                 with_grad ? &dlogits : nullptr);
    if (with_grad)
      for (std::size_t k = 0; k < dlogits.size(); ++k)
        traces[j].cls_logits.grad[k] = inv_r * dlogits[k];
    if (targets.labels[j] < class_count) {
      for (int k = 0; k < 4; ++k) {
        real d = 0;
        *l_reg += inv_pos *
                  smooth_l1(traces[j].box_deltas[static_cast<std::size_t>(k)] -
                                targets.deltas[j][static_cast<std::size_t>(k)],
                            with_grad ? &d : nullptr);
        if (with_grad)
          traces[j].box_deltas.grad[static_cast<std::size_t>(k)] = inv_pos * d;
      }
    }
  }
}

// RPN objectness (class-balanced BCE: positive and negative anchors each
// normalized by their own count, halved) + box regression (smooth L1 over
// positives). Balancing keeps the few positive anchors from being drowned
// by the ~100x larger negative set. Gradients go into the trace.
void rpn_losses(RpnHead::Trace& trace, const RpnTargets& targets,
                bool with_grad, real* l_obj, real* l_reg) {
  *l_obj = 0;
  *l_reg = 0;
  int n_neg = 0, n_pos = 0;
  for (int lab : targets.labels) {
    if (lab == 0) ++n_neg;
    if (lab == 1) ++n_pos;
  }
  if (n_neg + n_pos == 0) return;
  const real w_pos = n_pos > 0 ? 0.5 / static_cast<real>(n_pos) : 0.0;
  const real w_neg = n_neg > 0 ? 0.5 / static_cast<real>(n_neg) : 0.0;
  const real inv_pos = n_pos > 0 ? 1.0 / static_cast<real>(n_pos) : 0.0;
  const std::size_t cell_count = trace.obj_logits.size() /
                                 static_cast<std::size_t>(trace.obj_logits.dim(0));

  for (std::size_t i = 0; i < targets.labels.size(); ++i) {
    const int lab = targets.labels[i];
    if (lab < 0) continue;
    const real w = lab == 1 ? w_pos : w_neg;
    real dz = 0;
    *l_obj += w * bce_logit(trace.obj_logits.data[i], static_cast<real>(lab),
                            with_grad ? &dz : nullptr);
    if (with_grad) trace.obj_logits.grad[i] += w * dz;
    if (lab == 1) {
      const std::size_t a = i / cell_count;
      const std::size_t cell = i % cell_count;
      for (int k = 0; k < 4; ++k) {
        const std::size_t idx =
            (4 * a + static_cast<std::size_t>(k)) * cell_count + cell;
        real d = 0;
        *l_reg += inv_pos * smooth_l1(trace.deltas.data[idx] -
                                          targets.deltas[i][static_cast<std::size_t>(k)],
                                      with_grad ? &d : nullptr);
        if (with_grad) trace.deltas.grad[idx] += inv_pos * d;
      }
    }
  }
}

}  // namespace

LossBundle compute_losses(Detector& det, const TripletTensors& batch,
                          const StepOptions& opt) {
  const ModeFlags& f = opt.flags;
  const bool need_target = f.use_img || f.use_obj || f.use_reg;
  const bool need_aux = f.use_reg;
  if (need_target && !batch.target)
    throw InputError("mode requires a target-domain image");
  if (need_aux && !batch.aux)
    throw InputError("mode requires an auxiliary-domain image");

  LossBundle bundle;
  bundle.gamma = opt.gamma;

  // --- forward: backbone features per domain ---
  Backbone::Trace bt_s, bt_t, bt_a;
  Tensor& fs = const_cast<Tensor&>(det.backbone.forward(batch.source, bt_s));
  Tensor* ft = nullptr;
  Tensor* fa = nullptr;
  if (need_target)
    ft = &const_cast<Tensor&>(det.backbone.forward(*batch.target, bt_t));
  if (need_aux)
    fa = &const_cast<Tensor&>(det.backbone.forward(*batch.aux, bt_a));

  // --- RPN on the source image ---
  RpnHead::Trace rt;
  det.rpn.forward(fs, rt);
  const RpnTargets rpn_targets = assign_rpn_targets(det.anchors, batch.gt_boxes);
  real rpn_obj = 0, rpn_reg = 0;
  rpn_losses(rt, rpn_targets, opt.with_grad, &rpn_obj, &rpn_reg);

  // --- proposals (detached box geometry) ---
  std::vector<Box> rois;
  if (opt.fixed_proposals) {
    rois = *opt.fixed_proposals;
  } else {
    const ProposalSet props =
        propose_regions(rt, det.cfg, det.anchors, det.cfg.proposal_cap);
    rois = props.boxes;
    // ground-truth boxes join the ROI set so the head always sees positives
    rois.insert(rois.end(), batch.gt_boxes.begin(), batch.gt_boxes.end());
  }

  // --- ROI pooling + detection head on source ---
  std::vector<RoiPoolTrace> pt_s(rois.size());
  std::vector<Tensor> pooled_s(rois.size());
  std::vector<DetHead::Trace> ht(rois.size());
  for (std::size_t j = 0; j < rois.size(); ++j) {
    pooled_s[j] = roi_pool(fs, rois[j], det.cfg, pt_s[j]);
    det.head.forward(pooled_s[j], ht[j]);
  }
  const RoiTargets roi_targets = assign_roi_targets(
      rois, batch.gt_boxes, batch.gt_labels, det.cfg.class_count);
  real head_cls = 0, head_reg = 0;
  det_losses(ht, roi_targets, det.cfg.class_count, opt.with_grad, &head_cls,
             &head_reg);
  bundle.l_cls = rpn_obj + head_cls;
  bundle.l_reg = rpn_reg + head_reg;

  if (opt.with_grad) {
    for (std::size_t j = 0; j < rois.size(); ++j) {
      det.head.backward(ht[j]);
      for (std::size_t k = 0; k < pooled_s[j].size(); ++k)
        pooled_s[j].grad[k] += ht[j].input.grad[k];
    }
  }

  // --- pooled features on target/auxiliary at the SOURCE proposal boxes ---
  const bool need_pooled_t = f.use_obj || (f.use_reg && !opt.cross_camera);
  const bool need_pooled_a = f.use_reg && !opt.cross_camera;
  std::vector<RoiPoolTrace> pt_t(rois.size()), pt_a(rois.size());
  std::vector<Tensor> pooled_t, pooled_a;
  if (need_pooled_t) {
    pooled_t.resize(rois.size());
    for (std::size_t j = 0; j < rois.size(); ++j)
      pooled_t[j] = roi_pool(*ft, rois[j], det.cfg, pt_t[j]);
  }
  if (need_pooled_a) {
    pooled_a.resize(rois.size());
    for (std::size_t j = 0; j < rois.size(); ++j)
      pooled_a[j] = roi_pool(*fa, rois[j], det.cfg, pt_a[j]);
  }

  // --- image-level adaptation ---
  ImageDomainClassifier::Trace it_s, it_t;
  if (f.use_img) {
    const real p_s = det.img_dom.predict(fs, it_s);
    const real p_t = det.img_dom.predict(*ft, it_t);
    std::vector<real> dprobs;
    bundle.l_img =
        img_domain_loss({p_s, p_t}, {DomainLabel(1), DomainLabel(0)},
                        opt.with_grad ? &dprobs : nullptr);
    bundle.lambda_img =
        opt.adv_scale *
        (f.adv ? advgrl_lambda(bundle.l_img, opt.advgrl) : opt.advgrl.lambda0);
    if (opt.with_grad) {
      det.img_dom.backward(it_s, opt.gamma * dprobs[0]);
      det.img_dom.backward(it_t, opt.gamma * dprobs[1]);
      grl_backward(it_s.input, bundle.lambda_img, fs);
      grl_backward(it_t.input, bundle.lambda_img, *ft);
    }
  }

  // --- object-level adaptation ---
  std::vector<ObjectDomainClassifier::Trace> ot_s, ot_t;
  if (f.use_obj && !rois.empty()) {
    ot_s.resize(rois.size());
    ot_t.resize(rois.size());
    std::vector<real> probs;
    std::vector<DomainLabel> labels;
    for (std::size_t j = 0; j < rois.size(); ++j) {
      probs.push_back(det.obj_dom.predict(pooled_s[j], ot_s[j]));
      labels.emplace_back(1);
    }
    for (std::size_t j = 0; j < rois.size(); ++j) {
      probs.push_back(det.obj_dom.predict(pooled_t[j], ot_t[j]));
      labels.emplace_back(0);
    }
    std::vector<real> dprobs;
    bundle.l_obj =
        obj_domain_loss(probs, labels, opt.with_grad ? &dprobs : nullptr);
    bundle.lambda_obj =
        opt.adv_scale *
        (f.adv ? advgrl_lambda(bundle.l_obj, opt.advgrl) : opt.advgrl.lambda0);
    if (opt.with_grad) {
      // the loss sums over proposals, so the raw reversed gradient scales
      // with the proposal count and overwhelms the detection signal; spread
      // the reversal strength across proposals instead
      const real lam = bundle.lambda_obj / static_cast<real>(2 * rois.size());
      for (std::size_t j = 0; j < rois.size(); ++j) {
        det.obj_dom.backward(ot_s[j], opt.gamma * dprobs[j]);
        grl_backward(ot_s[j].input, lam, pooled_s[j]);
        det.obj_dom.backward(ot_t[j], opt.gamma * dprobs[rois.size() + j]);
        grl_backward(ot_t[j].input, lam, pooled_t[j]);
      }
    }
  }

  // --- domain-level metric regularization ---
  if (f.use_reg) {
    Tensor ts = fs, tt = *ft, ta = *fa;
    ts.zero_grad();
    tt.zero_grad();
    ta.zero_grad();
    bundle.lr_img = img_triplet_loss(ts, tt, ta, opt.delta, opt.with_grad);
    // Like the reversed gradients, the metric hinge is ramped in: distances
    // between untrained features are noise, and pulling on them at full
    // strength from the first step distorts the backbone before the
    // detection signal has shaped it. The source and auxiliary branches are
    // treated as stop-gradients: letting the hinge drag the source features
    // or push the auxiliary ones away distorts the detector, while the
    // useful direction is pulling target features toward the source.
    const real reg_scale = opt.gamma * opt.adv_scale * opt.reg_gain;
    if (opt.with_grad) {
      for (std::size_t i = 0; i < fs.size(); ++i)
        ft->grad[i] += reg_scale * tt.grad[i];
    }
    if (!opt.cross_camera && !rois.empty()) {
      std::vector<Tensor> os = pooled_s, ot = pooled_t, oa = pooled_a;
      for (auto& t : os) t.zero_grad();
      for (auto& t : ot) t.zero_grad();
      for (auto& t : oa) t.zero_grad();
      bundle.lr_obj = obj_triplet_loss(os, ot, oa, opt.delta, opt.with_grad);
      if (opt.with_grad) {
        for (std::size_t j = 0; j < rois.size(); ++j)
          for (std::size_t k = 0; k < os[j].size(); ++k)
            pooled_t[j].grad[k] += reg_scale * ot[j].grad[k];
      }
    }
  }

  if (ft && fa) {
    bundle.img_distances = {feature_distance(fs, *ft),
                            feature_distance(fs, *fa)};
  }

  total_loss(bundle, opt.gamma, opt.cross_camera);

  if (opt.with_grad) {
    // scatter pooled gradients back into the feature maps
    for (std::size_t j = 0; j < rois.size(); ++j) {
      roi_pool_backward(fs, pt_s[j], pooled_s[j]);
      if (need_pooled_t) roi_pool_backward(*ft, pt_t[j], pooled_t[j]);
      if (need_pooled_a) roi_pool_backward(*fa, pt_a[j], pooled_a[j]);
    }
    det.rpn.backward(rt, fs);
    det.backbone.backward(bt_s);
    if (need_target) det.backbone.backward(bt_t);
    if (need_aux) det.backbone.backward(bt_a);
  }
  return bundle;
}

void zero_grads(std::vector<NamedParam>& params) {
  for (auto& p : params) p.value->zero_grad();
}

void SgdOptimizer::step(std::vector<NamedParam>& params, real lr) {
  for (auto& p : params) {
    auto& v = velocity[p.name];
    if (v.size() != p.value->size()) v.assign(p.value->size(), 0);
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      v[i] = momentum * v[i] + p.value->grad[i] +
             weight_decay * p.value->data[i];
      p.value->data[i] -= lr * v[i];
    }
  }
}

namespace {

constexpr char kCkptMagic[8] = {'S', 'A', 'D', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

void write_blob(std::ostream& out, const std::string& name,
                const std::vector<int>& shape, const std::vector<real>& data) {
  write_string(out, name);
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(real)));
}

}  // namespace

void save_checkpoint(const std::string& path, Detector& det,
                     const SgdOptimizer& opt, int iter,
                     const std::string& rng_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint: " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  write_u32(out, 1);  // version
  write_u32(out, static_cast<std::uint32_t>(iter));
  auto params = det.params();
  write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (auto& p : params) write_blob(out, p.name, p.value->shape(), p.value->data);
  std::uint32_t n_vel = 0;
  for (auto& p : params)
    if (opt.velocity.count(p.name)) ++n_vel;
  write_u32(out, n_vel);
  for (auto& p : params) {
    auto it = opt.velocity.find(p.name);
    if (it != opt.velocity.end())
      write_blob(out, p.name, p.value->shape(), it->second);
  }
  write_string(out, rng_state);
  if (!out) throw InternalError("checkpoint write failed: " + path);
}

CheckpointInfo load_checkpoint(const std::string& path, Detector& det,
                               SgdOptimizer* opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint not found: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw InputError("not a checkpoint file: " + path);
  const std::uint32_t version = read_u32(in);
  if (version != 1)
    throw InputError("unsupported checkpoint version in " + path);
  CheckpointInfo info;
  info.iter = static_cast<int>(read_u32(in));

  auto params = det.params();
  std::map<std::string, Tensor*> by_name;
  for (auto& p : params) by_name[p.name] = p.value;

  const std::uint32_t n_params = read_u32(in);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = read_string(in);
    const std::uint32_t ndim = read_u32(in);
    std::size_t count = 1;
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int>(read_u32(in)));
      count *= static_cast<std::size_t>(shape.back());
    }
    std::vector<real> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(real)));
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw InputError("checkpoint parameter '" + name +
                       "' does not match the model");
    if (it->second->shape() != shape)
      throw InputError("checkpoint parameter '" + name + "' has wrong shape");
    it->second->data = std::move(data);
  }

  const std::uint32_t n_vel = read_u32(in);
  for (std::uint32_t i = 0; i < n_vel; ++i) {
    const std::string name = read_string(in);
    const std::uint32_t ndim = read_u32(in);
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d)
      count *= static_cast<std::size_t>(read_u32(in));
    std::vector<real> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(real)));
    if (opt) opt->velocity[name] = std::move(data);
  }
  info.rng_state = read_string(in);
  if (!in) throw InputError("truncated checkpoint: " + path);
  return info;
}

TripletDataset::TripletDataset(const std::string& dataset_dir,
                               const std::string& split) {
  manifest_ = load_manifest(manifest_path_for(dataset_dir, split));
  samples_ = read_dataset(manifest_, dataset_dir);
  // Pick the strongest intensity actually present per weather.
  const auto resolve = [&](Weather w) -> std::string {
    const std::string base = weather_name(w);
    if (samples_.empty()) return base + "_large";
    const auto& renders = samples_[0].weather;
    for (const char* lv : {"large", "medium", "small"}) {
      const std::string key = base + "_" + lv;
      if (renders.count(key)) return key;
    }
    throw InputError("dataset has no " + base + " renders");
  };
  target_key_ = resolve(manifest_.target_weather);
  aux_key_ = resolve(other_weather(manifest_.target_weather));
}

const cv::Mat& TripletDataset::clear(std::size_t i) const {
  const_cast<TripletDataset*>(this)->clear_reads++;
  return samples_[i].clear.image;
}

const cv::Mat& TripletDataset::weather(std::size_t i,
                                       const std::string& key) const {
  auto it = samples_[i].weather.find(key);
  if (it == samples_[i].weather.end())
    throw InputError("dataset sample lacks weather render: " + key);
  return it->second;
}

const cv::Mat& TripletDataset::target(std::size_t i) const {
  const_cast<TripletDataset*>(this)->target_reads++;
  return weather(i, target_key_);
}

const cv::Mat& TripletDataset::aux(std::size_t i) const {
  const_cast<TripletDataset*>(this)->aux_reads++;
  return weather(i, aux_key_);
}

const std::vector<Box>& TripletDataset::boxes(std::size_t i) const {
  return samples_[i].clear.boxes;
}
const std::vector<int>& TripletDataset::labels(std::size_t i) const {
  return samples_[i].clear.labels;
}
const std::string& TripletDataset::sample_id(std::size_t i) const {
  return samples_[i].id;
}

namespace {

// Occasional batches (a bad proposal set, an early adversarial spike) emit
// gradients two orders of magnitude above the typical step and can knock a
// run into a dead regime it never recovers from. Clipping the global norm at
// a level only the spikes reach leaves ordinary steps untouched.
constexpr real kGradClipNorm = 10.0;

// Gain applied to the metric regularizer's feature gradients during
// training (see StepOptions::reg_gain).
constexpr real kRegGradGain = 20.0;

// Fraction of a box's pixels erased by the patch mask.
double masked_fraction(const cv::Mat& mask, const Box& box) {
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
  const int x1 = std::min(mask.cols, static_cast<int>(std::ceil(box.x_max)));
  const int y1 = std::min(mask.rows, static_cast<int>(std::ceil(box.y_max)));
  if (x1 <= x0 || y1 <= y0) return 0;
  const cv::Mat roi = mask(cv::Range(y0, y1), cv::Range(x0, x1));
  return static_cast<double>(cv::countNonZero(roi)) /
         (static_cast<double>(x1 - x0) * (y1 - y0));
}

void clip_grad_norm(std::vector<NamedParam>& params, real max_norm) {
  real n2 = 0;
  for (const auto& p : params)
    for (real g : p.value->grad) n2 += g * g;
  const real norm = std::sqrt(n2);
  if (norm <= max_norm) return;
  const real scale = max_norm / norm;
  for (auto& p : params)
    for (real& g : p.value->grad) g *= scale;
}

void append_metrics_row(std::ofstream& out, int iter, const LossBundle& b,
                        bool have_triplet) {
  char buf[512];
  const real rate =
      have_triplet ? (b.img_distances.d_st < b.img_distances.d_sa ? 1.0 : 0.0)
                   : std::nan("");
  std::snprintf(buf, sizeof(buf),
                "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                "%.17g,%.17g\n",
                iter, b.l_cls, b.l_reg, b.l_img, b.l_obj, b.lr_img, b.lr_obj,
                b.gamma, b.total, b.lambda_img, b.lambda_obj, rate);
  out << buf;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::string& out_dir,
                  bool resume, int stop_after) {
  cfg.validate();
  fs::create_directories(out_dir);
  cfg.save((fs::path(out_dir) / "config_snapshot.json").string());

  const ModeFlags flags = mode_flags(cfg.mode);
  TripletDataset ds(cfg.dataset_dir, "train");
  if (ds.size() == 0) throw InputError("train split is empty");

  Detector det;
  det.init(cfg.model, cfg.seed);
  SgdOptimizer opt;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  auto params = det.params();

  Rng rng(derive_seed(cfg.seed, 0x72a1a));
  int start_iter = 0;
  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();

  if (resume && fs::exists(ckpt_path)) {
    const CheckpointInfo info = load_checkpoint(ckpt_path, det, &opt);
    start_iter = info.iter;
    std::istringstream state(info.rng_state);
    state >> rng;
  }

  std::ofstream metrics(metrics_path,
                        start_iter > 0 ? std::ios::app : std::ios::trunc);
  if (!metrics) throw InputError("cannot write metrics log: " + metrics_path);
  if (start_iter == 0)
    metrics << "iter,l_cls,l_reg,l_img,l_obj,lr_img,lr_obj,gamma,total,"
               "lambda_img,lambda_obj,ordering_rate\n";

  StepOptions step;
  step.flags = flags;
  step.advgrl = cfg.advgrl;
  step.delta = cfg.delta;
  step.gamma = cfg.gamma;
  step.cross_camera = cfg.cross_camera;

  const bool need_target = flags.use_img || flags.use_obj || flags.use_reg;
  const bool need_aux = flags.use_reg;
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);

  const int end_iter = stop_after > 0 ? std::min(stop_after, cfg.total_iters())
                                      : cfg.total_iters();
  for (int iter = start_iter; iter < end_iter; ++iter) {
    const real progress = static_cast<real>(iter) / cfg.total_iters();
    step.adv_scale = 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
    step.reg_gain = kRegGradGain;
    const std::size_t idx = pick(rng);

    cv::Mat src = ds.clear(idx);
    cv::Mat tgt, aux;
    if (need_target) tgt = ds.target(idx);
    if (need_aux) aux = ds.aux(idx);

    cv::Mat last_mask;
    if (flags.use_dmp) {
      src = src.clone();
      if (need_target) tgt = tgt.clone();
      if (need_aux) aux = aux.clone();
      const double rate = sample_mask_rate(rng);
      last_mask = sample_patch_mask(src.rows, src.cols, cfg.dmp, rate, rng);
      std::vector<cv::Mat*> imgs = {&src};
      if (need_target) imgs.push_back(&tgt);
      if (need_aux) imgs.push_back(&aux);
      apply_patch_mask(imgs, last_mask);
    }

    TripletTensors batch;
    batch.source = image_to_tensor(src);
    if (need_target) batch.target = image_to_tensor(tgt);
    if (need_aux) batch.aux = image_to_tensor(aux);
    batch.gt_boxes = ds.boxes(idx);
    batch.gt_labels = ds.labels(idx);
    if (flags.use_dmp) {
      // masking erases the evidence but not the annotation; supervising the
      // detector on mostly-erased objects is label noise, so drop those
      // boxes from this iteration's targets
      std::vector<Box> kept_boxes;
      std::vector<int> kept_labels;
      for (std::size_t bi = 0; bi < batch.gt_boxes.size(); ++bi) {
        if (masked_fraction(last_mask, batch.gt_boxes[bi]) <= 0.5) {
          kept_boxes.push_back(batch.gt_boxes[bi]);
          kept_labels.push_back(batch.gt_labels[bi]);
        }
      }
      batch.gt_boxes = std::move(kept_boxes);
      batch.gt_labels = std::move(kept_labels);
    }

    zero_grads(params);
    const LossBundle bundle = compute_losses(det, batch, step);
    clip_grad_norm(params, kGradClipNorm);
    opt.step(params, cfg.lr_at(iter));

    append_metrics_row(metrics, iter, bundle, need_target && need_aux);

    if (cfg.checkpoint_interval > 0 &&
        (iter + 1) % cfg.checkpoint_interval == 0) {
      std::ostringstream state;
      state << rng;
      save_checkpoint(ckpt_path, det, opt, iter + 1, state.str());
    }
  }

  std::ostringstream state;
  state << rng;
  save_checkpoint(ckpt_path, det, opt, end_iter, state.str());
  metrics.close();

  TrainResult result;
  result.checkpoint_path = ckpt_path;
  result.metrics_path = metrics_path;
  result.iterations_run = end_iter - start_iter;
  result.clear_reads = ds.clear_reads;
  result.target_reads = ds.target_reads;
  result.aux_reads = ds.aux_reads;
  return result;
}

}  // namespace stormadapt
