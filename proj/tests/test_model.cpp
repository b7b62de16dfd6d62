#include <cmath>
#include <stdexcept>

#include "doctest.h"

#include "amref/model.hpp"
#include "amref/rng.hpp"

using namespace amref;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.blocks = 1;
  cfg.mlp_hidden = 24;
  return cfg;
}

FindingCatalog tiny_catalog() {
  return FindingCatalog({"disc_lesion", "bar_lesion"});
}

ImageTensor random_image(Rng& rng, int size) {
  ImageTensor img;
  img.pixels.resize(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) img.pixels(i, j) = rng.uniform();
  return img;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("catalog: uniqueness and index lookup") {
  FindingCatalog cat({"a", "b", "c"});
  CHECK(cat.index("b") == 1);
  CHECK(cat.contains("c"));
  CHECK_FALSE(cat.contains("d"));
  CHECK_THROWS_AS(cat.index("d"), std::invalid_argument);
  CHECK_THROWS_AS(FindingCatalog({"a", "a"}), std::invalid_argument);
  CHECK_THROWS_AS(FindingCatalog({""}), std::invalid_argument);
}

TEST_CASE("encode_image: shapes and determinism") {
  ModelConfig cfg;  // defaults: 64x64, P=8, d=32
  ModelParams params = init_model(cfg, tiny_catalog(), 1);
  Rng rng(9);
  ImageTensor img = random_image(rng, 64);
  PatchEmbeddings enc = encode_image(img, params);
  CHECK(enc.grid.rows() == 64);
  CHECK(enc.grid.cols() == 32);
  CHECK(enc.h == 8);
  CHECK(enc.w == 8);
  CHECK(enc.grid.allFinite());

  PatchEmbeddings again = encode_image(img, params);
  CHECK(enc.grid == again.grid);

  ImageTensor bad;
  bad.pixels = Matrix::Zero(60, 64);
  CHECK_THROWS_AS(encode_image(bad, params), std::invalid_argument);
}

TEST_CASE("patchify: row-major patch and pixel order") {
  Matrix img(4, 4);
  int v = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) img(i, j) = v++;
  Matrix p = patchify(img, 2);
  CHECK(p.rows() == 4);
  CHECK(p.cols() == 4);
  // patch 0 = rows 0-1, cols 0-1 flattened row-major
  CHECK(p(0, 0) == 0);
  CHECK(p(0, 1) == 1);
  CHECK(p(0, 2) == 4);
  CHECK(p(0, 3) == 5);
  // patch 1 = rows 0-1, cols 2-3
  CHECK(p(1, 0) == 2);
  // patch 2 = rows 2-3, cols 0-1
  CHECK(p(2, 0) == 8);
}

TEST_CASE("text_embed: frozen, distinct, validated") {
  ModelParams params = init_model(tiny_cfg(), tiny_catalog(), 5);
  TextEmbedding a = text_embed("disc_lesion", params);
  TextEmbedding b = text_embed("bar_lesion", params);
  CHECK((a.vector - b.vector).norm() > 0.0);
  CHECK(text_embed("disc_lesion", params).vector == a.vector);
  CHECK_THROWS_AS(text_embed("nope", params), std::invalid_argument);
}

TEST_CASE("cross_attend: shape and raw score stack") {
  ModelParams params = init_model(tiny_cfg(), tiny_catalog(), 2);
  Rng rng(4);
  ImageTensor img = random_image(rng, 32);
  PatchEmbeddings enc = encode_image(img, params);
  CrossAttendResult res = cross_attend(enc, text_embed("disc_lesion", params), params);
  CHECK(res.attn.maps.rows() == 16);
  CHECK(res.attn.maps.cols() == 2);
  CHECK(res.attn.h == 4);
  CHECK(res.attn.w == 4);
  CHECK(res.fused.size() == 16);
  // raw scores are unbounded pre-softmax values; the exact map must match a
  // by-hand computation for head 0
  const auto& ch = params.cross[0];
  Eigen::VectorXd expect =
      (enc.grid * ch.wq) *
      (text_embed("disc_lesion", params).vector * ch.wk).transpose() /
      std::sqrt(static_cast<double>(tiny_cfg().head_dim()));
  CHECK((res.attn.maps.col(0) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("seg_head_apply: identity head reproduces squashed channel mean") {
  ModelConfig cfg = tiny_cfg();
  ModelParams params = init_model(cfg, tiny_catalog(), 3);
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    ImageTensor img = random_image(rng, 32);
    PromptOutput out = forward_prompt(params, img, "disc_lesion");
    // IEI is the default init, so refined == logistic(mean over heads)
    for (int i = 0; i < out.attn.h; ++i) {
      for (int j = 0; j < out.attn.w; ++j) {
        double mean = out.attn.maps.row(i * out.attn.w + j).mean();
        CHECK(std::abs(out.refined.map(i, j) - logistic(mean)) < 1e-12);
      }
    }
  }
}

TEST_CASE("seg_head_apply: matches per-pixel dense oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    AttentionStack attn;
    attn.h = 3;
    attn.w = 3;
    attn.maps = rng.gaussian_matrix(9, 2, 2.0);
    SegHeadParams head = random_head_init(2, 1000 + trial);
    RefinedMap out = seg_head_apply(attn, head);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        Eigen::Vector2d v = attn.maps.row(i * 3 + j).transpose();
        Eigen::Vector2d mixed = head.weight * v + head.bias.transpose();
        double expect = logistic(mixed.mean());
        CHECK(std::abs(out.map(i, j) - expect) < 1e-10);
        CHECK(out.map(i, j) >= 0.0);
        CHECK(out.map(i, j) <= 1.0);
      }
    }
  }
}

TEST_CASE("iei_init and random_head_init") {
  SegHeadParams h = iei_init(4);
  CHECK(h.weight == Matrix::Identity(4, 4));
  CHECK(h.bias == Matrix::Zero(1, 4));
  SegHeadParams h1 = iei_init(1);
  CHECK(h1.weight(0, 0) == 1.0);

  SegHeadParams r1 = random_head_init(4, 9);
  SegHeadParams r2 = random_head_init(4, 9);
  SegHeadParams r3 = random_head_init(4, 10);
  CHECK(r1.weight == r2.weight);
  CHECK(r1.bias == r2.bias);
  CHECK(r1.weight != r3.weight);
  CHECK(r1.weight.allFinite());
}

TEST_CASE("cross_attend: perturbing one patch changes its score row") {
  ModelParams params = init_model(tiny_cfg(), tiny_catalog(), 6);
  Rng rng(8);
  ImageTensor img = random_image(rng, 32);
  PatchEmbeddings enc = encode_image(img, params);
  TextEmbedding text = text_embed("bar_lesion", params);
  CrossAttendResult base = cross_attend(enc, text, params);

  PatchEmbeddings bumped = enc;
  bumped.grid.row(5).array() += 1.0;  // perturb patch 5 directly
  CrossAttendResult after = cross_attend(bumped, text, params);
  CHECK((base.attn.maps.row(5) - after.attn.maps.row(5)).cwiseAbs().maxCoeff() > 1e-9);
  for (int r = 0; r < 16; ++r) {
    if (r == 5) continue;
    CHECK(base.attn.maps.row(r) == after.attn.maps.row(r));
  }
}

TEST_CASE("classify: linear head on fused vector") {
  ModelParams params = init_model(tiny_cfg(), tiny_catalog(), 6);
  RowVector zero = RowVector::Zero(16);
  CHECK(classify(zero, "disc_lesion", params) == params.cls_b(0, 0));
  CHECK_THROWS_AS(classify(zero, "nope", params), std::invalid_argument);
}

TEST_CASE("model graph forward agrees with plain forward") {
  ModelConfig cfg = tiny_cfg();
  ModelParams params = init_model(cfg, tiny_catalog(), 21);
  // move off the IEI point so the head path is nontrivial
  params.seg_heads[0] = random_head_init(cfg.heads, 55);
  Rng rng(31);
  ImageTensor img = random_image(rng, 32);

  PromptOutput plain = forward_prompt(params, img, "disc_lesion");

  ad::Tape tape;
  ModelGraph graph(tape, params);
  ad::Var x = graph.backbone(img.pixels);
  auto cross = graph.cross_attend(x, 0);
  ad::Var refined = graph.seg_apply(cross.stack, 0);
  ad::Var logit = graph.classify(cross.fused, 0);

  CHECK((tape.value(cross.stack) - plain.attn.maps).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(tape.value(logit)(0, 0) - plain.logit) < 1e-12);
  const Matrix& rf = tape.value(refined);
  for (int i = 0; i < plain.attn.h; ++i)
    for (int j = 0; j < plain.attn.w; ++j)
      CHECK(std::abs(rf(i * plain.attn.w + j, 0) - plain.refined.map(i, j)) < 1e-12);
}

TEST_CASE("model graph gradients match finite differences") {
  ModelConfig cfg = tiny_cfg();
  cfg.blocks = 1;
  ModelParams params = init_model(cfg, tiny_catalog(), 77);
  Rng rng(13);
  ImageTensor img = random_image(rng, 32);

  auto scalar_logit = [&](const ModelParams& p) {
    return forward_prompt(p, img, "bar_lesion").logit;
  };

  ad::Tape tape;
  ModelGraph graph(tape, params);
  auto cross = graph.cross_attend(graph.backbone(img.pixels), 1);
  ad::Var logit = graph.classify(cross.fused, 1);
  tape.seed(logit, Matrix::Constant(1, 1, 1.0));
  tape.backward();
  auto grads = graph.param_grads();

  const double h = 1e-6;
  // spot-check a few parameters across the depth of the network
  for (const std::string name : {"patch_w", "block0.wq", "cross1.wk", "cls_w"}) {
    REQUIRE(grads.count(name) == 1);
    ModelParams probe = params;
    Matrix* tensor = nullptr;
    for (auto& [n, m] : probe.trainable_tensors())
      if (n == name) tensor = m;
    REQUIRE(tensor != nullptr);
    for (int check = 0; check < 3; ++check) {
      Eigen::Index i = static_cast<Eigen::Index>(rng.below(tensor->rows()));
      Eigen::Index j = static_cast<Eigen::Index>(rng.below(tensor->cols()));
      double orig = (*tensor)(i, j);
      (*tensor)(i, j) = orig + h;
      double up = scalar_logit(probe);
      (*tensor)(i, j) = orig - h;
      double down = scalar_logit(probe);
      (*tensor)(i, j) = orig;
      double fd = (up - down) / (2.0 * h);
      CHECK(grads.at(name)(i, j) == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("model config validation") {
  ModelConfig bad = tiny_cfg();
  bad.image_size = 30;  // not a multiple of 8
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_cfg();
  bad.dim = 15;  // not a multiple of heads
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(init_model(tiny_cfg(), FindingCatalog(std::vector<std::string>{}), 0),
                  std::invalid_argument);
}
