#include "amref/train.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "amref/autodiff.hpp"
#include "amref/eval.hpp"
#include "amref/io.hpp"
#include "amref/rng.hpp"

namespace amref {

using nlohmann::json;

Arm arm_from_string(const std::string& s) {
  if (s == "dwarf") return Arm::Dwarf;
  if (s == "cls_only") return Arm::ClsOnly;
  if (s == "gain") return Arm::Gain;
  if (s == "direct_attention") return Arm::DirectAttention;
  if (s == "dwarf_expert_teacher") return Arm::DwarfExpertTeacher;
  throw std::invalid_argument("unknown training arm '" + s + "'");
}

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::Dwarf: return "dwarf";
    case Arm::ClsOnly: return "cls_only";
    case Arm::Gain: return "gain";
    case Arm::DirectAttention: return "direct_attention";
    case Arm::DwarfExpertTeacher: return "dwarf_expert_teacher";
  }
  return "?";
}

InitMode init_mode_from_string(const std::string& s) {
  if (s == "iei") return InitMode::Iei;
  if (s == "random") return InitMode::Random;
  throw std::invalid_argument("unknown init_mode '" + s + "'");
}

std::string to_string(InitMode m) {
  return m == InitMode::Iei ? "iei" : "random";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (learning_rate <= 0.0) {
    throw std::invalid_argument("train.learning_rate must be > 0");
  }
  if (negative_ratio < 0.0) {
    throw std::invalid_argument("train.negative_ratio must be >= 0");
  }
  if (eval_every < 1) throw std::invalid_argument("train.eval_every must be >= 1");
  loss.validate();
  model.validate();
}

namespace {

json model_config_to_json(const ModelConfig& m) {
  return json{{"image_size", m.image_size}, {"patch_size", m.patch_size},
              {"dim", m.dim},               {"heads", m.heads},
              {"blocks", m.blocks},         {"mlp_hidden", m.mlp_hidden},
              {"text_correlation", m.text_correlation}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.image_size = j.value("image_size", m.image_size);
  m.patch_size = j.value("patch_size", m.patch_size);
  m.dim = j.value("dim", m.dim);
  m.heads = j.value("heads", m.heads);
  m.blocks = j.value("blocks", m.blocks);
  m.mlp_hidden = j.value("mlp_hidden", m.mlp_hidden);
  m.text_correlation = j.value("text_correlation", m.text_correlation);
  return m;
}

}  // namespace

json TrainConfig::to_json() const {
  return json{{"epochs", epochs},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"weight_decay", weight_decay},
              {"seed", seed},
              {"loss",
               {{"smooth", loss.smooth},
                {"eps", loss.eps},
                {"w_fp", loss.w_fp},
                {"alpha_seg", loss.alpha_seg}}},
              {"init_mode", amref::to_string(init_mode)},
              {"arm", amref::to_string(arm)},
              {"negative_ratio", negative_ratio},
              {"eval_every", eval_every},
              {"shuffle_findings", shuffle_findings},
              {"gain_use_heads", gain_use_heads},
              {"model", model_config_to_json(model)}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  if (j.contains("loss")) {
    const json& l = j["loss"];
    c.loss.smooth = l.value("smooth", c.loss.smooth);
    c.loss.eps = l.value("eps", c.loss.eps);
    c.loss.w_fp = l.value("w_fp", c.loss.w_fp);
    c.loss.alpha_seg = l.value("alpha_seg", c.loss.alpha_seg);
  }
  if (j.contains("init_mode")) {
    c.init_mode = init_mode_from_string(j["init_mode"].get<std::string>());
  }
  if (j.contains("arm")) c.arm = arm_from_string(j["arm"].get<std::string>());
  c.negative_ratio = j.value("negative_ratio", c.negative_ratio);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.shuffle_findings = j.value("shuffle_findings", c.shuffle_findings);
  c.gain_use_heads = j.value("gain_use_heads", c.gain_use_heads);
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  return c;
}

namespace {

// Decoupled-weight-decay adaptive-moment optimizer; per-tensor step counters
// because the cyclic schedule touches different heads in different epochs.
class AdamW {
 public:
  AdamW(double lr, double weight_decay) : lr_(lr), wd_(weight_decay) {}

  void step(ModelParams& params, const std::map<std::string, Matrix>& grads) {
    for (auto& [name, tensor] : params.trainable_tensors()) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Matrix& g = git->second;
      // an identically-zero gradient means this tensor took no part in the
      // step; leaving it untouched keeps inert graph branches side-effect free
      if (g.cwiseAbs().maxCoeff() == 0.0) continue;
      auto& st = state_[name];
      if (st.m.size() == 0) {
        st.m = Matrix::Zero(tensor->rows(), tensor->cols());
        st.v = Matrix::Zero(tensor->rows(), tensor->cols());
      }
      st.t += 1;
      st.m = beta1_ * st.m + (1.0 - beta1_) * g;
      st.v = beta2_ * st.v + (1.0 - beta2_) * g.cwiseProduct(g).eval();
      double bc1 = 1.0 - std::pow(beta1_, st.t);
      double bc2 = 1.0 - std::pow(beta2_, st.t);
      Matrix mhat = st.m / bc1;
      Matrix vhat = st.v / bc2;
      *tensor -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
      // Biases are exempt from decay as usual, and so are the refinement
      // heads: their neutral point is the identity mix, not zero, so pulling
      // them toward zero would not regularize, it would bias them away from
      // the attention they are meant to refine.
      bool exempt = tensor->rows() == 1 || name.rfind("head.", 0) == 0;
      if (wd_ > 0.0 && !exempt) *tensor -= lr_ * wd_ * (*tensor);
    }
  }

 private:
  struct Moments {
    Matrix m, v;
    int t = 0;
  };
  double lr_, wd_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::map<std::string, Moments> state_;
};

Matrix flatten_grid(const Matrix& grid) {
  Matrix out(grid.rows() * grid.cols(), 1);
  for (Eigen::Index i = 0; i < grid.rows(); ++i)
    for (Eigen::Index j = 0; j < grid.cols(); ++j)
      out(i * grid.cols() + j, 0) = grid(i, j);
  return out;
}

ModelParams init_for_training(const SyntheticSplits& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.train.samples.empty()) {
    throw std::invalid_argument("train: empty training split");
  }
  if (data.train.samples.front().image.height() != cfg.model.image_size) {
    throw std::invalid_argument("train: dataset image size does not match model");
  }
  ModelParams params = init_model(cfg.model, data.train.catalog, cfg.seed);
  if (cfg.init_mode == InitMode::Random) {
    for (int f = 0; f < params.catalog.size(); ++f) {
      params.seg_heads[f] =
          random_head_init(cfg.model.heads, cfg.seed + 0x5eed + f);
    }
  }
  return params;
}

std::unordered_map<std::string, const Sample*> index_split(const Dataset& ds) {
  std::unordered_map<std::string, const Sample*> idx;
  for (const auto& s : ds.samples) idx.emplace(s.id, &s);
  return idx;
}

enum class SegMode { None, Head, Direct };

struct BatchStats {
  double cls = 0.0;
  double seg = 0.0;
  int n_cls = 0;
  int n_seg = 0;
};

// One optimizer step over a batch. `prompt_findings` is either the single
// cyclic finding or the whole catalog; seg supervision applies to the
// prompted findings that are positive for the sample.
BatchStats run_batch(ModelParams& params, AdamW& opt,
                     const std::vector<const Sample*>& batch,
                     const std::vector<int>& prompt_findings, SegMode seg_mode,
                     const TrainConfig& cfg, const TeacherFn* teacher) {
  const double alpha = cfg.loss.alpha_seg;
  bool do_seg = seg_mode != SegMode::None && (alpha > 0.0 || cfg.always_build_seg);

  std::map<std::string, Matrix> grad_acc;
  BatchStats stats;
  double inv_batch = 1.0 / static_cast<double>(batch.size());
  double inv_prompts = 1.0 / static_cast<double>(prompt_findings.size());

  for (const Sample* s : batch) {
    ad::Tape tape;
    ModelGraph graph(tape, params);
    ad::Var x = graph.backbone(s->image.pixels);
    double sample_cls = 0.0;
    for (int f : prompt_findings) {
      auto cross = graph.cross_attend(x, f);
      ad::Var logit_var = graph.classify(cross.fused, f);
      double z = tape.value(logit_var)(0, 0);
      double y = s->labels[f];
      double sp = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      sample_cls += (sp - y * z) * inv_prompts;
      double gz = (1.0 / (1.0 + std::exp(-z)) - y) * inv_prompts * inv_batch;
      tape.seed(logit_var, Matrix::Constant(1, 1, gz));

      if (do_seg && s->labels[f] != 0.0) {
        ad::Var refined = seg_mode == SegMode::Head
                              ? graph.seg_apply(cross.stack, f)
                              : graph.seg_direct(cross.stack);
        const std::string& name = params.catalog.names()[f];
        Matrix target;
        if (teacher != nullptr) {
          target = flatten_grid((*teacher)(*s, name));
        } else {
          target = flatten_grid(
              downsample_mask(s->masks.at(name), cfg.model.patch_size));
        }
        const Matrix& pred = tape.value(refined);
        double l = seg_loss(pred, target, cfg.loss);
        stats.seg += l;
        stats.n_seg += 1;
        // seg terms are summed within a sample (a multi-label sample
        // contributes one term per positive prompted finding) and averaged
        // over the batch
        Matrix g = seg_loss_grad(pred, target, cfg.loss) * (alpha * inv_batch);
        tape.seed(refined, g);
      }
    }
    stats.cls += sample_cls;
    stats.n_cls += 1;
    tape.backward();
    for (auto& [name, g] : graph.param_grads()) {
      auto it = grad_acc.find(name);
      if (it == grad_acc.end()) {
        grad_acc.emplace(name, g);
      } else {
        it->second += g;
      }
    }
  }
  opt.step(params, grad_acc);
  return stats;
}

void run_eval_cadence(TrainState& state, const SyntheticSplits& data,
                      const TrainConfig& cfg, int epoch, EpochRecord& rec) {
  if ((epoch + 1) % cfg.eval_every != 0 && epoch + 1 != cfg.epochs) return;
  MetricReport rep = evaluate(state.params, data.val);
  rec.val_max_dice = rep.macro.max_dice;
  rec.val_auc = rep.macro.auc;
  if (rep.macro.max_dice > state.best_val_max_dice) {
    state.best_val_max_dice = rep.macro.max_dice;
    state.best_by_dice = state.params;
    state.best_dice_epoch = epoch;
  }
  if (rep.macro.auc > state.best_val_auc) {
    state.best_val_auc = rep.macro.auc;
    state.best_by_auc = state.params;
    state.best_auc_epoch = epoch;
  }
}

void check_finite(const EpochRecord& rec, int epoch) {
  if (!std::isfinite(rec.cls_loss) || !std::isfinite(rec.seg_loss)) {
    std::ostringstream ss;
    ss << "training diverged at epoch " << epoch << " (cls=" << rec.cls_loss
       << " seg=" << rec.seg_loss << ")";
    throw std::runtime_error(ss.str());
  }
}

// Cyclic per-finding loop shared by the dwarf, direct-attention and
// expert-teacher arms.
TrainState train_cyclic(const SyntheticSplits& data, const TrainConfig& cfg,
                        SegMode seg_mode, const TeacherFn* teacher) {
  TrainState state;
  state.params = init_for_training(data, cfg);
  AdamW opt(cfg.learning_rate, cfg.weight_decay);
  auto index = index_split(data.train);
  auto views = decompose(data.train, cfg.negative_ratio, cfg.seed);
  int K = state.params.catalog.size();

  std::vector<int> order(K);
  for (int f = 0; f < K; ++f) order[f] = f;

  for (int e = 0; e < cfg.epochs; ++e) {
    if (cfg.shuffle_findings && e % K == 0) {
      Rng rng(cfg.seed + 0xc1c1e + static_cast<std::uint64_t>(e / K));
      rng.shuffle(order);
    }
    int f = order[e % K];
    state.finding_cursor = e % K;
    const SingleLabelView& view = views[f];
    EpochRecord rec;
    rec.epoch = e;
    rec.finding = view.finding;

    if (view.positives.empty()) {
      std::cerr << "warning: skipping epoch " << e << ", no positives for '"
                << view.finding << "'\n";
      state.history.push_back(rec);
      state.epoch = e + 1;
      continue;
    }

    std::vector<std::string> ids = view.positives;
    ids.insert(ids.end(), view.negatives.begin(), view.negatives.end());
    Rng rng(cfg.seed * 100003 + static_cast<std::uint64_t>(e));
    rng.shuffle(ids);

    BatchStats epoch_stats;
    std::vector<int> prompts{f};
    for (std::size_t off = 0; off < ids.size();
         off += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const Sample*> batch;
      for (std::size_t i = off;
           i < std::min(ids.size(), off + static_cast<std::size_t>(cfg.batch_size));
           ++i) {
        batch.push_back(index.at(ids[i]));
      }
      BatchStats bs = run_batch(state.params, opt, batch, prompts, seg_mode, cfg,
                                teacher);
      epoch_stats.cls += bs.cls;
      epoch_stats.seg += bs.seg;
      epoch_stats.n_cls += bs.n_cls;
      epoch_stats.n_seg += bs.n_seg;
    }
    rec.cls_loss = epoch_stats.n_cls ? epoch_stats.cls / epoch_stats.n_cls : 0.0;
    rec.seg_loss = epoch_stats.n_seg ? epoch_stats.seg / epoch_stats.n_seg : 0.0;
    check_finite(rec, e);
    run_eval_cadence(state, data, cfg, e, rec);
    state.history.push_back(rec);
    state.epoch = e + 1;
  }
  state.finding_cursor = cfg.epochs % K;
  return state;
}

// Joint loop: every epoch visits the whole training split and prompts every
// finding (cls_only and the GAIN-style arm).
TrainState train_joint(const SyntheticSplits& data, const TrainConfig& cfg,
                       SegMode seg_mode) {
  TrainState state;
  state.params = init_for_training(data, cfg);
  AdamW opt(cfg.learning_rate, cfg.weight_decay);
  auto index = index_split(data.train);
  int K = state.params.catalog.size();
  std::vector<int> prompts(K);
  for (int f = 0; f < K; ++f) prompts[f] = f;

  std::vector<std::string> all_ids;
  for (const auto& s : data.train.samples) all_ids.push_back(s.id);

  for (int e = 0; e < cfg.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.finding = "*";

    std::vector<std::string> ids = all_ids;
    Rng rng(cfg.seed * 100003 + static_cast<std::uint64_t>(e));
    rng.shuffle(ids);

    BatchStats epoch_stats;
    for (std::size_t off = 0; off < ids.size();
         off += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const Sample*> batch;
      for (std::size_t i = off;
           i < std::min(ids.size(), off + static_cast<std::size_t>(cfg.batch_size));
           ++i) {
        batch.push_back(index.at(ids[i]));
      }
      BatchStats bs =
          run_batch(state.params, opt, batch, prompts, seg_mode, cfg, nullptr);
      epoch_stats.cls += bs.cls;
      epoch_stats.seg += bs.seg;
      epoch_stats.n_cls += bs.n_cls;
      epoch_stats.n_seg += bs.n_seg;
    }
    rec.cls_loss = epoch_stats.n_cls ? epoch_stats.cls / epoch_stats.n_cls : 0.0;
    rec.seg_loss = epoch_stats.n_seg ? epoch_stats.seg / epoch_stats.n_seg : 0.0;
    check_finite(rec, e);
    run_eval_cadence(state, data, cfg, e, rec);
    state.history.push_back(rec);
    state.epoch = e + 1;
  }
  return state;
}

}  // namespace

TrainState train_dwarf(const SyntheticSplits& data, const TrainConfig& cfg) {
  return train_cyclic(data, cfg, SegMode::Head, nullptr);
}

TrainState train_cls_only(const SyntheticSplits& data, const TrainConfig& cfg) {
  return train_joint(data, cfg, SegMode::None);
}

TrainState train_gain(const SyntheticSplits& data, const TrainConfig& cfg) {
  return train_joint(data, cfg,
                     cfg.gain_use_heads ? SegMode::Head : SegMode::Direct);
}

TrainState train_direct_attention(const SyntheticSplits& data,
                                  const TrainConfig& cfg) {
  return train_cyclic(data, cfg, SegMode::Direct, nullptr);
}

Matrix ExpertModel::predict(const ImageTensor& image) const {
  Matrix patches = patchify(image.pixels, patch_size);
  Matrix h = patches * w1;
  h.rowwise() += b1.row(0);
  h = h.unaryExpr([](double t) {
    return 0.5 * t * (1.0 + std::erf(t * 0.7071067811865475244));
  });
  Matrix z = h * w2;
  z.rowwise() += b2.row(0);
  int grid = static_cast<int>(image.pixels.rows()) / patch_size;
  Matrix out(grid, grid);
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j)
      out(i, j) = 1.0 / (1.0 + std::exp(-z(i * grid + j, 0)));
  return out;
}

ExpertModel train_expert(const SyntheticSplits& data, const std::string& finding,
                         const TrainConfig& cfg) {
  cfg.validate();
  int f = data.train.catalog.index(finding);
  std::vector<const Sample*> positives;
  for (const auto& s : data.train.samples) {
    if (s.labels[f] != 0.0) positives.push_back(&s);
  }
  if (positives.empty()) {
    throw std::invalid_argument("train_expert: no positives for '" + finding + "'");
  }

  const int hidden = 64;
  // The expert is an auxiliary model with its own, much smaller decay: it has
  // far fewer parameters than the main trunk and reusing the trunk's decay
  // strength would needlessly blunt the pseudo-labels.
  const double expert_wd = 1e-4;
  int pp = cfg.model.patch_size * cfg.model.patch_size;
  Rng init(cfg.seed + io::fnv1a("expert:" + finding));
  ExpertModel em;
  em.finding = finding;
  em.patch_size = cfg.model.patch_size;
  em.w1 = init.gaussian_matrix(pp, hidden, 1.0 / std::sqrt(static_cast<double>(pp)));
  em.b1 = Matrix::Zero(1, hidden);
  em.w2 = init.gaussian_matrix(hidden, 1, 1.0 / std::sqrt(static_cast<double>(hidden)));
  em.b2 = Matrix::Zero(1, 1);

  struct Moments {
    Matrix m, v;
    int t = 0;
  };
  std::map<std::string, Moments> opt_state;
  auto adam_update = [&](const std::string& name, Matrix& tensor, const Matrix& g) {
    auto& st = opt_state[name];
    if (st.m.size() == 0) {
      st.m = Matrix::Zero(tensor.rows(), tensor.cols());
      st.v = Matrix::Zero(tensor.rows(), tensor.cols());
    }
    st.t += 1;
    st.m = 0.9 * st.m + 0.1 * g;
    st.v = 0.999 * st.v + 0.001 * g.cwiseProduct(g).eval();
    Matrix mhat = st.m / (1.0 - std::pow(0.9, st.t));
    Matrix vhat = st.v / (1.0 - std::pow(0.999, st.t));
    tensor -= cfg.learning_rate *
              (mhat.array() / (vhat.array().sqrt() + 1e-8)).matrix();
    tensor -= cfg.learning_rate * expert_wd * tensor;
  };

  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<const Sample*> order = positives;
    Rng rng(cfg.seed * 99991 + static_cast<std::uint64_t>(e));
    rng.shuffle(order);
    for (std::size_t off = 0; off < order.size();
         off += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end =
          std::min(order.size(), off + static_cast<std::size_t>(cfg.batch_size));
      std::map<std::string, Matrix> grads;
      double inv = 1.0 / static_cast<double>(end - off);
      for (std::size_t i = off; i < end; ++i) {
        const Sample* s = order[i];
        ad::Tape tape;
        ad::Var patches = tape.input(patchify(s->image.pixels, em.patch_size));
        ad::Var w1v = tape.input(em.w1), b1v = tape.input(em.b1);
        ad::Var w2v = tape.input(em.w2), b2v = tape.input(em.b2);
        ad::Var h = tape.gelu(tape.add_rowvec(tape.matmul(patches, w1v), b1v));
        ad::Var pred = tape.sigmoid(tape.add_rowvec(tape.matmul(h, w2v), b2v));
        Matrix target = flatten_grid(
            downsample_mask(s->masks.at(finding), em.patch_size));
        Matrix g = seg_loss_grad(tape.value(pred), target, cfg.loss) * inv;
        tape.seed(pred, g);
        tape.backward();
        auto acc = [&](const char* n, ad::Var v) {
          auto it = grads.find(n);
          if (it == grads.end()) grads.emplace(n, tape.grad(v));
          else it->second += tape.grad(v);
        };
        acc("w1", w1v);
        acc("b1", b1v);
        acc("w2", w2v);
        acc("b2", b2v);
      }
      adam_update("w1", em.w1, grads.at("w1"));
      adam_update("b1", em.b1, grads.at("b1"));
      adam_update("w2", em.w2, grads.at("w2"));
      adam_update("b2", em.b2, grads.at("b2"));
    }
  }
  return em;
}

TrainState train_dwarf_with_teacher_fn(const SyntheticSplits& data,
                                       const TeacherFn& teacher,
                                       const TrainConfig& cfg) {
  return train_cyclic(data, cfg, SegMode::Head, &teacher);
}

TrainState train_dwarf_with_teachers(const SyntheticSplits& data,
                                     const std::vector<ExpertModel>& experts,
                                     const TrainConfig& cfg) {
  std::map<std::string, const ExpertModel*> by_name;
  for (const auto& e : experts) by_name[e.finding] = &e;
  for (const auto& name : data.train.catalog.names()) {
    if (!by_name.count(name)) {
      throw std::invalid_argument("missing expert for finding '" + name + "'");
    }
  }
  TeacherFn teacher = [&by_name](const Sample& s, const std::string& finding) {
    Matrix p = by_name.at(finding)->predict(s.image);
    return (p.array() >= 0.5).cast<double>().matrix().eval();
  };
  return train_dwarf_with_teacher_fn(data, teacher, cfg);
}

TrainState train_arm(const SyntheticSplits& data, const TrainConfig& cfg) {
  switch (cfg.arm) {
    case Arm::Dwarf: return train_dwarf(data, cfg);
    case Arm::ClsOnly: return train_cls_only(data, cfg);
    case Arm::Gain: return train_gain(data, cfg);
    case Arm::DirectAttention: return train_direct_attention(data, cfg);
    case Arm::DwarfExpertTeacher: {
      std::vector<ExpertModel> experts;
      for (const auto& name : data.train.catalog.names()) {
        experts.push_back(train_expert(data, name, cfg));
      }
      return train_dwarf_with_teachers(data, experts, cfg);
    }
  }
  throw std::invalid_argument("unknown arm");
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path,
                     const json& meta) {
  json j;
  j["format"] = "amref-checkpoint-v1";
  j["model"] = model_config_to_json(params.cfg);
  json catalog = json::array();
  for (const auto& n : params.catalog.names()) catalog.push_back(n);
  j["catalog"] = catalog;
  j["seed"] = params.seed;
  json tensors;
  auto dump_tensor = [&](const std::string& name, const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(row);
    }
    tensors[name] = rows;
  };
  for (const auto& [name, m] : params.trainable_tensors()) dump_tensor(name, *m);
  dump_tensor("text_table", params.text_table);
  j["tensors"] = tensors;
  if (!meta.is_null() && !meta.empty()) j["meta"] = meta;
  io::write_text_file(path, j.dump(2) + "\n");
}

ModelParams load_checkpoint(const std::filesystem::path& path, json* meta_out) {
  json j = json::parse(io::read_text_file(path));
  if (j.value("format", "") != "amref-checkpoint-v1") {
    throw std::runtime_error("not an amref checkpoint: " + path.string());
  }
  std::vector<std::string> names;
  for (const auto& n : j.at("catalog")) names.push_back(n.get<std::string>());
  ModelParams params = init_model(model_config_from_json(j.at("model")),
                                  FindingCatalog(names),
                                  j.value("seed", std::uint64_t{0}));
  auto read_tensor = [&](const std::string& name, Matrix& m) {
    const json& rows = j.at("tensors").at(name);
    if (static_cast<Eigen::Index>(rows.size()) != m.rows()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' has wrong shape");
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const json& row = rows[r];
      if (static_cast<Eigen::Index>(row.size()) != m.cols()) {
        throw std::runtime_error("checkpoint tensor '" + name + "' has wrong shape");
      }
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = row[c].get<double>();
    }
  };
  for (auto& [name, m] : params.trainable_tensors()) read_tensor(name, *m);
  read_tensor("text_table", params.text_table);
  if (meta_out != nullptr) *meta_out = j.value("meta", json::object());
  return params;
}

std::string checkpoint_hash(const ModelParams& params) {
  std::ostringstream ss;
  ss.precision(17);
  for (const auto& [name, m] : params.trainable_tensors()) {
    ss << name << ":";
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) ss << (*m)(r, c) << ",";
  }
  ss << "text_table:";
  for (Eigen::Index r = 0; r < params.text_table.rows(); ++r)
    for (Eigen::Index c = 0; c < params.text_table.cols(); ++c)
      ss << params.text_table(r, c) << ",";
  return io::fnv1a_hex(ss.str());
}

json history_to_json(const std::vector<EpochRecord>& history) {
  json arr = json::array();
  for (const auto& rec : history) {
    json r{{"epoch", rec.epoch},
           {"finding", rec.finding},
           {"cls_loss", rec.cls_loss},
           {"seg_loss", rec.seg_loss}};
    if (rec.val_max_dice >= 0.0) {
      r["val_max_dice"] = rec.val_max_dice;
      r["val_auc"] = rec.val_auc;
    }
    arr.push_back(r);
  }
  return arr;
}

}  // namespace amref
