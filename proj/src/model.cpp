#include "amref/model.hpp"

#include "amref/rng.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace amref {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

FindingCatalog::FindingCatalog(std::vector<std::string> names)
    : names_(std::move(names)) {
  for (int i = 0; i < static_cast<int>(names_.size()); ++i) {
    if (names_[i].empty()) {
      throw std::invalid_argument("catalog: empty finding name");
    }
    auto [it, inserted] = index_.emplace(names_[i], i);
    if (!inserted) {
      throw std::invalid_argument("catalog: duplicate finding '" + names_[i] + "'");
    }
  }
}

int FindingCatalog::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("unknown finding '" + name + "'");
  }
  return it->second;
}

bool FindingCatalog::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

void ModelConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw std::invalid_argument("model: image_size must be a positive multiple of patch_size");
  }
  if (dim <= 0 || heads <= 0 || dim % heads != 0) {
    throw std::invalid_argument("model: dim must be a positive multiple of heads");
  }
  if (blocks < 0 || mlp_hidden <= 0) {
    throw std::invalid_argument("model: bad block/mlp configuration");
  }
  if (text_correlation < 0.0 || text_correlation >= 1.0) {
    throw std::invalid_argument("model: text_correlation must be in [0,1)");
  }
}

Matrix AttentionStack::head_map(int k) const {
  Matrix out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) out(i, j) = maps(i * w + j, k);
  return out;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::trainable_tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back("patch_w", &patch_w);
  out.emplace_back("patch_b", &patch_b);
  out.emplace_back("pos", &pos);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::string p = "block" + std::to_string(b) + ".";
    out.emplace_back(p + "wq", &blocks[b].wq);
    out.emplace_back(p + "wk", &blocks[b].wk);
    out.emplace_back(p + "wv", &blocks[b].wv);
    out.emplace_back(p + "wo", &blocks[b].wo);
    out.emplace_back(p + "w1", &blocks[b].w1);
    out.emplace_back(p + "b1", &blocks[b].b1);
    out.emplace_back(p + "w2", &blocks[b].w2);
    out.emplace_back(p + "b2", &blocks[b].b2);
  }
  for (std::size_t k = 0; k < cross.size(); ++k) {
    std::string p = "cross" + std::to_string(k) + ".";
    out.emplace_back(p + "wq", &cross[k].wq);
    out.emplace_back(p + "wk", &cross[k].wk);
    out.emplace_back(p + "wv", &cross[k].wv);
    out.emplace_back(p + "wo", &cross[k].wo);
  }
  out.emplace_back("cls_w", &cls_w);
  out.emplace_back("cls_b", &cls_b);
  for (std::size_t f = 0; f < seg_heads.size(); ++f) {
    std::string p = "head." + catalog.names()[f] + ".";
    out.emplace_back(p + "weight", &seg_heads[f].weight);
    out.emplace_back(p + "bias", &seg_heads[f].bias);
  }
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::trainable_tensors()
    const {
  auto mut = const_cast<ModelParams*>(this)->trainable_tensors();
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.reserve(mut.size());
  for (auto& [n, m] : mut) out.emplace_back(n, m);
  return out;
}

SegHeadParams iei_init(int heads) {
  SegHeadParams h;
  h.weight = Matrix::Identity(heads, heads);
  h.bias = Matrix::Zero(1, heads);
  return h;
}

SegHeadParams random_head_init(int heads, std::uint64_t seed) {
  Rng g(seed);
  SegHeadParams h;
  h.weight = g.gaussian_matrix(heads, heads, 1.0 / std::sqrt(static_cast<double>(heads)));
  h.bias = g.gaussian_matrix(1, heads, 0.1);
  return h;
}

ModelParams init_model(const ModelConfig& cfg, const FindingCatalog& catalog,
                       std::uint64_t seed) {
  cfg.validate();
  if (catalog.size() == 0) throw std::invalid_argument("model: empty catalog");

  ModelParams p;
  p.cfg = cfg;
  p.catalog = catalog;
  p.seed = seed;

  Rng g(seed);
  int d = cfg.dim;
  int pp = cfg.patch_size * cfg.patch_size;
  double sp = 1.0 / std::sqrt(static_cast<double>(pp));
  double sd = 1.0 / std::sqrt(static_cast<double>(d));
  double sm = 1.0 / std::sqrt(static_cast<double>(cfg.mlp_hidden));
  double sh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

  p.patch_w = g.gaussian_matrix(pp, d, sp);
  p.patch_b = Matrix::Zero(1, d);
  p.pos = g.gaussian_matrix(cfg.patches(), d, 0.02);
  for (int b = 0; b < cfg.blocks; ++b) {
    SelfAttentionBlock blk;
    blk.wq = g.gaussian_matrix(d, d, sd);
    blk.wk = g.gaussian_matrix(d, d, sd);
    blk.wv = g.gaussian_matrix(d, d, sd);
    blk.wo = g.gaussian_matrix(d, d, sd);
    blk.w1 = g.gaussian_matrix(d, cfg.mlp_hidden, sd);
    blk.b1 = Matrix::Zero(1, cfg.mlp_hidden);
    blk.w2 = g.gaussian_matrix(cfg.mlp_hidden, d, sm);
    blk.b2 = Matrix::Zero(1, d);
    p.blocks.push_back(std::move(blk));
  }
  for (int k = 0; k < cfg.heads; ++k) {
    CrossAttentionHead ch;
    ch.wq = g.gaussian_matrix(d, cfg.head_dim(), sd);
    ch.wk = g.gaussian_matrix(d, cfg.head_dim(), sd);
    ch.wv = g.gaussian_matrix(d, cfg.head_dim(), sd);
    ch.wo = g.gaussian_matrix(cfg.head_dim(), d, sh);
    p.cross.push_back(std::move(ch));
  }
  p.cls_w = g.gaussian_matrix(d, catalog.size(), sd);
  p.cls_b = Matrix::Zero(1, catalog.size());
  for (int f = 0; f < catalog.size(); ++f) {
    p.seg_heads.push_back(iei_init(cfg.heads));
  }
  // Prompt embeddings for different findings share a common domain component:
  // real text encoders place same-domain prompts close together, so the rows
  // are correlated rather than orthogonal.
  p.text_table = g.gaussian_matrix(catalog.size(), d, 1.0);
  Matrix common = g.gaussian_matrix(1, d, 1.0);
  common /= common.norm();
  double rho = cfg.text_correlation;
  for (Eigen::Index r = 0; r < p.text_table.rows(); ++r) {
    p.text_table.row(r) /= p.text_table.row(r).norm();
    p.text_table.row(r) = std::sqrt(rho) * common.row(0) +
                          std::sqrt(1.0 - rho) * p.text_table.row(r);
    p.text_table.row(r) /= p.text_table.row(r).norm();
  }
  return p;
}

Matrix patchify(const Matrix& image, int patch_size) {
  int H = static_cast<int>(image.rows());
  int W = static_cast<int>(image.cols());
  if (H % patch_size != 0 || W % patch_size != 0) {
    throw std::invalid_argument("image dimensions not divisible by patch size");
  }
  int h = H / patch_size, w = W / patch_size;
  Matrix out(h * w, patch_size * patch_size);
  for (int pi = 0; pi < h; ++pi) {
    for (int pj = 0; pj < w; ++pj) {
      int row = pi * w + pj;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          out(row, y * patch_size + x) =
              image(pi * patch_size + y, pj * patch_size + x);
    }
  }
  return out;
}

PatchEmbeddings encode_image(const ImageTensor& image, const ModelParams& params) {
  const ModelConfig& cfg = params.cfg;
  Matrix patches = patchify(image.pixels, cfg.patch_size);
  if (patches.rows() != params.pos.rows()) {
    throw std::invalid_argument("image grid does not match model configuration");
  }
  Matrix x = patches * params.patch_w;
  x.rowwise() += params.patch_b.row(0);
  x += params.pos;
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  for (const auto& blk : params.blocks) {
    Matrix q = x * blk.wq, k = x * blk.wk, v = x * blk.wv;
    Matrix scores = (q * k.transpose()) * inv_sqrt_d;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      double m = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - m).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    x += (scores * v) * blk.wo;
    Matrix hpre = x * blk.w1;
    hpre.rowwise() += blk.b1.row(0);
    Matrix hact = hpre.unaryExpr([](double t) {
      return 0.5 * t * (1.0 + std::erf(t * 0.7071067811865475244));
    });
    Matrix mlp = hact * blk.w2;
    mlp.rowwise() += blk.b2.row(0);
    x += mlp;
  }
  PatchEmbeddings out;
  out.grid = std::move(x);
  out.h = static_cast<int>(image.pixels.rows()) / cfg.patch_size;
  out.w = static_cast<int>(image.pixels.cols()) / cfg.patch_size;
  return out;
}

TextEmbedding text_embed(const std::string& finding, const ModelParams& params) {
  int idx = params.catalog.index(finding);
  TextEmbedding t;
  t.vector = params.text_table.row(idx);
  t.finding = finding;
  return t;
}

CrossAttendResult cross_attend(const PatchEmbeddings& patches,
                               const TextEmbedding& text,
                               const ModelParams& params) {
  const ModelConfig& cfg = params.cfg;
  if (patches.grid.cols() != cfg.dim || text.vector.size() != cfg.dim) {
    throw std::invalid_argument("cross_attend: embedding width mismatch");
  }
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  Matrix stack(patches.grid.rows(), cfg.heads);
  RowVector fused = RowVector::Zero(cfg.dim);
  for (int k = 0; k < cfg.heads; ++k) {
    const auto& ch = params.cross[k];
    Matrix q = patches.grid * ch.wq;           // N x dh
    RowVector tk = text.vector * ch.wk;        // 1 x dh
    Eigen::VectorXd s = (q * tk.transpose()) * inv_sqrt_dh;  // raw scores
    stack.col(k) = s;
    Eigen::VectorXd a = s;
    double m = a.maxCoeff();
    a = (a.array() - m).exp();
    a /= a.sum();
    Matrix v = patches.grid * ch.wv;  // N x dh
    RowVector pooled = a.transpose() * v;
    fused += pooled * ch.wo;
  }
  CrossAttendResult out;
  out.fused = fused;
  out.attn.maps = std::move(stack);
  out.attn.h = patches.h;
  out.attn.w = patches.w;
  out.attn.finding = text.finding;
  return out;
}

RefinedMap seg_head_apply(const AttentionStack& attn, const SegHeadParams& head) {
  if (head.weight.rows() != attn.maps.cols() ||
      head.weight.cols() != attn.maps.cols()) {
    throw std::invalid_argument("seg_head_apply: channel count mismatch");
  }
  Matrix mixed = attn.maps * head.weight.transpose();
  mixed.rowwise() += head.bias.row(0);
  Eigen::VectorXd mean = mixed.rowwise().mean();
  RefinedMap out;
  out.map.resize(attn.h, attn.w);
  for (int i = 0; i < attn.h; ++i)
    for (int j = 0; j < attn.w; ++j)
      out.map(i, j) = logistic(mean(i * attn.w + j));
  out.finding = attn.finding;
  return out;
}

double classify(const RowVector& fused, const std::string& finding,
                const ModelParams& params) {
  int idx = params.catalog.index(finding);
  if (fused.size() != params.cfg.dim) {
    throw std::invalid_argument("classify: fused width mismatch");
  }
  return (fused * params.cls_w)(0, idx) + params.cls_b(0, idx);
}

PromptOutput forward_prompt(const ModelParams& params, const ImageTensor& image,
                            const std::string& finding) {
  PatchEmbeddings enc = encode_image(image, params);
  TextEmbedding text = text_embed(finding, params);
  CrossAttendResult ca = cross_attend(enc, text, params);
  PromptOutput out;
  out.refined =
      seg_head_apply(ca.attn, params.seg_heads[params.catalog.index(finding)]);
  out.attn = std::move(ca.attn);
  out.fused = ca.fused;
  out.logit = classify(out.fused, finding, params);
  return out;
}

// ---- differentiable path ----

ModelGraph::ModelGraph(ad::Tape& tape, const ModelParams& params)
    : tape_(tape), params_(params) {}

ad::Var ModelGraph::leaf(const std::string& name, const Matrix& value) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  ad::Var v = tape_.input(value);
  leaves_.emplace(name, v);
  return v;
}

ad::Var ModelGraph::backbone(const Matrix& image) {
  const ModelConfig& cfg = params_.cfg;
  ad::Var patches = tape_.input(patchify(image, cfg.patch_size));
  ad::Var x = tape_.add_rowvec(tape_.matmul(patches, leaf("patch_w", params_.patch_w)),
                               leaf("patch_b", params_.patch_b));
  x = tape_.add(x, leaf("pos", params_.pos));
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  for (std::size_t b = 0; b < params_.blocks.size(); ++b) {
    const auto& blk = params_.blocks[b];
    std::string p = "block" + std::to_string(b) + ".";
    ad::Var q = tape_.matmul(x, leaf(p + "wq", blk.wq));
    ad::Var k = tape_.matmul(x, leaf(p + "wk", blk.wk));
    ad::Var v = tape_.matmul(x, leaf(p + "wv", blk.wv));
    ad::Var attn =
        tape_.softmax_rows(tape_.scale(tape_.matmul(q, tape_.transpose(k)), inv_sqrt_d));
    x = tape_.add(x, tape_.matmul(tape_.matmul(attn, v), leaf(p + "wo", blk.wo)));
    ad::Var h = tape_.gelu(tape_.add_rowvec(tape_.matmul(x, leaf(p + "w1", blk.w1)),
                                            leaf(p + "b1", blk.b1)));
    x = tape_.add(x, tape_.add_rowvec(tape_.matmul(h, leaf(p + "w2", blk.w2)),
                                      leaf(p + "b2", blk.b2)));
  }
  return x;
}

ModelGraph::CrossOut ModelGraph::cross_attend(ad::Var patches, int finding_idx) {
  const ModelConfig& cfg = params_.cfg;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  ad::Var text =
      tape_.input(params_.text_table.row(finding_idx));  // frozen: plain input
  std::vector<ad::Var> score_cols;
  ad::Var fused;
  for (int k = 0; k < cfg.heads; ++k) {
    const auto& ch = params_.cross[k];
    std::string p = "cross" + std::to_string(k) + ".";
    ad::Var q = tape_.matmul(patches, leaf(p + "wq", ch.wq));
    ad::Var tk = tape_.matmul(text, leaf(p + "wk", ch.wk));
    ad::Var s = tape_.scale(tape_.matmul(q, tape_.transpose(tk)), inv_sqrt_dh);
    score_cols.push_back(s);
    ad::Var a = tape_.softmax_rows(tape_.transpose(s));  // 1 x N
    ad::Var v = tape_.matmul(patches, leaf(p + "wv", ch.wv));
    ad::Var pooled = tape_.matmul(a, v);
    ad::Var contrib = tape_.matmul(pooled, leaf(p + "wo", ch.wo));
    fused = fused.valid() ? tape_.add(fused, contrib) : contrib;
  }
  CrossOut out;
  out.stack = tape_.hcat(score_cols);
  out.fused = fused;
  return out;
}

ad::Var ModelGraph::seg_apply(ad::Var stack, int finding_idx) {
  const auto& head = params_.seg_heads[finding_idx];
  std::string p = "head." + params_.catalog.names()[finding_idx] + ".";
  ad::Var mixed =
      tape_.add_rowvec(tape_.matmul(stack, tape_.transpose(leaf(p + "weight", head.weight))),
                       leaf(p + "bias", head.bias));
  return tape_.sigmoid(tape_.row_mean(mixed));
}

ad::Var ModelGraph::seg_direct(ad::Var stack) {
  return tape_.sigmoid(tape_.row_mean(stack));
}

ad::Var ModelGraph::classify(ad::Var fused, int finding_idx) {
  ad::Var logits =
      tape_.add_rowvec(tape_.matmul(fused, leaf("cls_w", params_.cls_w)),
                       leaf("cls_b", params_.cls_b));
  // select this finding's logit; the one-hot is a constant, so gradients
  // reach only the corresponding classifier column
  Matrix onehot = Matrix::Zero(params_.catalog.size(), 1);
  onehot(finding_idx, 0) = 1.0;
  return tape_.matmul(logits, tape_.input(onehot));
}

std::map<std::string, Matrix> ModelGraph::param_grads() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, var] : leaves_) out.emplace(name, tape_.grad(var));
  return out;
}

}  // namespace amref
