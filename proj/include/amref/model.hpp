#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "amref/autodiff.hpp"

namespace amref {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// Ordered list of finding names; doubles as prompt vocabulary and class index.
class FindingCatalog {
 public:
  FindingCatalog() = default;
  explicit FindingCatalog(std::vector<std::string> names);

  int index(const std::string& name) const;  // throws on unknown finding
  bool contains(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  int size() const { return static_cast<int>(names_.size()); }

  bool operator==(const FindingCatalog& other) const {
    return names_ == other.names_;
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
};

struct ModelConfig {
  int image_size = 64;
  int patch_size = 8;
  int dim = 32;
  int heads = 4;
  int blocks = 2;
  int mlp_hidden = 64;
  // Cosine-squared overlap of the frozen prompt embeddings with a shared
  // domain direction; 0 gives independent random prompts. The default mirrors
  // real text encoders, where same-domain prompts embed close together.
  double text_correlation = 0.8;

  int grid() const { return image_size / patch_size; }
  int patches() const { return grid() * grid(); }
  int head_dim() const { return dim / heads; }
  void validate() const;
};

// H x W pixels in [0,1], single channel.
struct ImageTensor {
  Matrix pixels;
  int height() const { return static_cast<int>(pixels.rows()); }
  int width() const { return static_cast<int>(pixels.cols()); }
};

// Patch-grid embeddings, stored pixel-major: row p = patch (p / w, p % w).
struct PatchEmbeddings {
  Matrix grid;  // (h*w) x dim
  int h = 0;
  int w = 0;
};

struct TextEmbedding {
  RowVector vector;
  std::string finding;
};

// Raw per-head cross-attention score maps for one finding, pixel-major
// (h*w) x heads. Values are unbounded and must not be clipped before the
// segmentation head.
struct AttentionStack {
  Matrix maps;  // (h*w) x C
  int h = 0;
  int w = 0;
  std::string finding;

  Matrix head_map(int k) const;  // h x w view of head k
};

struct RefinedMap {
  Matrix map;  // h x w, every cell in [0,1]
  std::string finding;
};

// Per-finding channel-mixing head: pixel channel vector v -> W v + b.
struct SegHeadParams {
  Matrix weight;  // C x C
  Matrix bias;    // 1 x C
};

struct SelfAttentionBlock {
  Matrix wq, wk, wv, wo;  // dim x dim
  Matrix w1, b1;          // dim x mlp, 1 x mlp
  Matrix w2, b2;          // mlp x dim, 1 x dim
};

struct CrossAttentionHead {
  Matrix wq, wk, wv;  // dim x head_dim
  Matrix wo;          // head_dim x dim
};

struct ModelParams {
  ModelConfig cfg;
  FindingCatalog catalog;
  std::uint64_t seed = 0;

  Matrix patch_w;  // (P*P) x dim
  Matrix patch_b;  // 1 x dim
  Matrix pos;      // patches x dim
  std::vector<SelfAttentionBlock> blocks;
  std::vector<CrossAttentionHead> cross;
  Matrix cls_w;  // dim x K, one classifier column per finding
  Matrix cls_b;  // 1 x K
  std::vector<SegHeadParams> seg_heads;  // one per finding

  Matrix text_table;  // K x dim, frozen, never trained

  // Named trainable tensors in a fixed order (text_table excluded).
  std::vector<std::pair<std::string, Matrix*>> trainable_tensors();
  std::vector<std::pair<std::string, const Matrix*>> trainable_tensors() const;
};

ModelParams init_model(const ModelConfig& cfg, const FindingCatalog& catalog,
                       std::uint64_t seed);

// Identity weight, zero bias: the head starts from the model's own attention.
SegHeadParams iei_init(int heads);
SegHeadParams random_head_init(int heads, std::uint64_t seed);

// Splits an image into non-overlapping P x P patches, row-major, each patch
// flattened row-major: result is (h*w) x (P*P).
Matrix patchify(const Matrix& image, int patch_size);

PatchEmbeddings encode_image(const ImageTensor& image, const ModelParams& params);
TextEmbedding text_embed(const std::string& finding, const ModelParams& params);

struct CrossAttendResult {
  RowVector fused;  // 1 x dim
  AttentionStack attn;
};
CrossAttendResult cross_attend(const PatchEmbeddings& patches,
                               const TextEmbedding& text,
                               const ModelParams& params);

RefinedMap seg_head_apply(const AttentionStack& attn, const SegHeadParams& head);
double classify(const RowVector& fused, const std::string& finding,
                const ModelParams& params);

// Full inference pass for one (image, finding) prompt.
struct PromptOutput {
  AttentionStack attn;
  RefinedMap refined;
  RowVector fused;
  double logit = 0.0;
};
PromptOutput forward_prompt(const ModelParams& params, const ImageTensor& image,
                            const std::string& finding);

// Differentiable forward on a tape. Parameter leaves are inserted lazily by
// name; after backward() the per-parameter gradients are read back through
// param_grads().
class ModelGraph {
 public:
  ModelGraph(ad::Tape& tape, const ModelParams& params);

  ad::Var backbone(const Matrix& image);  // -> (h*w) x dim embeddings

  struct CrossOut {
    ad::Var stack;  // (h*w) x C raw scores
    ad::Var fused;  // 1 x dim
  };
  CrossOut cross_attend(ad::Var patches, int finding_idx);
  ad::Var seg_apply(ad::Var stack, int finding_idx);
  ad::Var seg_direct(ad::Var stack);  // squashed channel mean, head bypassed
  ad::Var classify(ad::Var fused, int finding_idx);

  // Gradients for every parameter leaf touched by this graph, keyed by name.
  std::map<std::string, Matrix> param_grads() const;

 private:
  ad::Var leaf(const std::string& name, const Matrix& value);

  ad::Tape& tape_;
  const ModelParams& params_;
  std::map<std::string, ad::Var> leaves_;
};

}  // namespace amref
