// Python bindings for the core operations: synthetic data, losses, forward
// passes, training arms, metrics.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"

#include "amref/data.hpp"
#include "amref/eval.hpp"
#include "amref/losses.hpp"
#include "amref/model.hpp"
#include "amref/train.hpp"

namespace py = pybind11;
using namespace amref;

namespace {

SyntheticConfig make_synthetic_config(int n_train, int n_val, int n_test,
                                      int image_size, double co_occurrence,
                                      double p_negative, double noise,
                                      std::uint64_t seed) {
  SyntheticConfig cfg = SyntheticConfig::default_benchmark();
  cfg.n_train = n_train;
  cfg.n_val = n_val;
  cfg.n_test = n_test;
  cfg.image_size = image_size;
  cfg.co_occurrence = co_occurrence;
  cfg.p_negative = p_negative;
  cfg.noise = noise;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_json_str(const std::string& text) {
  return TrainConfig::from_json(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_amref, m) {
  m.doc() = "attention-map refinement: core operations";

  py::class_<LossConfig>(m, "LossConfig")
      .def(py::init<>())
      .def_readwrite("smooth", &LossConfig::smooth)
      .def_readwrite("eps", &LossConfig::eps)
      .def_readwrite("w_fp", &LossConfig::w_fp)
      .def_readwrite("alpha_seg", &LossConfig::alpha_seg)
      .def("validate", &LossConfig::validate);

  m.def("soft_dice_score", &soft_dice_score, py::arg("pred"), py::arg("target"),
        py::arg("cfg") = LossConfig{});
  m.def("fp_dice_score", &fp_dice_score, py::arg("pred"), py::arg("target"),
        py::arg("cfg") = LossConfig{});
  m.def("seg_loss", &seg_loss, py::arg("pred"), py::arg("target"),
        py::arg("cfg") = LossConfig{});
  m.def("seg_loss_grad", &seg_loss_grad, py::arg("pred"), py::arg("target"),
        py::arg("cfg") = LossConfig{});
  m.def("cls_loss", &cls_loss);
  m.def("cls_loss_grad", &cls_loss_grad);

  m.def("dice_at", &dice_at);
  m.def("iou_at", &iou_at);
  m.def("max_dice", &max_dice);
  m.def("hit_rate", &hit_rate);
  m.def("auc", &auc);
  m.def("confusion_metrics", &confusion_metrics, py::arg("scores"),
        py::arg("labels"), py::arg("threshold") = 0.5);
  m.def("upsample_nearest", &upsample_nearest);
  m.def("polygon_to_mask", &polygon_to_mask);
  m.def("bbox_to_mask", &bbox_to_mask);
  m.def("downsample_mask", &downsample_mask, py::arg("mask"),
        py::arg("patch_size"), py::arg("frac") = 0.25);

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def_readwrite("n_train", &SyntheticConfig::n_train)
      .def_readwrite("n_val", &SyntheticConfig::n_val)
      .def_readwrite("n_test", &SyntheticConfig::n_test)
      .def_readwrite("image_size", &SyntheticConfig::image_size)
      .def_readwrite("co_occurrence", &SyntheticConfig::co_occurrence)
      .def_readwrite("p_negative", &SyntheticConfig::p_negative)
      .def_readwrite("noise", &SyntheticConfig::noise)
      .def_readwrite("context_cue", &SyntheticConfig::context_cue)
      .def_readwrite("n_distractors", &SyntheticConfig::n_distractors)
      .def_readwrite("distractor_scale", &SyntheticConfig::distractor_scale)
      .def_readwrite("seed", &SyntheticConfig::seed);
  m.def("synthetic_config", &make_synthetic_config, py::arg("n_train") = 200,
        py::arg("n_val") = 50, py::arg("n_test") = 50, py::arg("image_size") = 64,
        py::arg("co_occurrence") = 0.3, py::arg("p_negative") = 0.25,
        py::arg("noise") = 0.05, py::arg("seed") = 0);
  m.def("default_benchmark", &SyntheticConfig::default_benchmark);

  py::class_<ImageTensor>(m, "ImageTensor")
      .def_property_readonly("pixels",
                             [](const ImageTensor& t) { return t.pixels; });
  py::class_<Sample>(m, "Sample")
      .def_readonly("id", &Sample::id)
      .def_readonly("image", &Sample::image)
      .def_property_readonly("labels", [](const Sample& s) { return s.labels; })
      .def_property_readonly("masks", [](const Sample& s) { return s.masks; });
  py::class_<FindingCatalog>(m, "FindingCatalog")
      .def(py::init<std::vector<std::string>>())
      .def("index", &FindingCatalog::index)
      .def("names", &FindingCatalog::names)
      .def("__len__", &FindingCatalog::size);
  py::class_<Dataset>(m, "Dataset")
      .def_readonly("samples", &Dataset::samples)
      .def_readonly("catalog", &Dataset::catalog)
      .def_readonly("split", &Dataset::split);
  py::class_<SyntheticSplits>(m, "SyntheticSplits")
      .def_readonly("train", &SyntheticSplits::train)
      .def_readonly("val", &SyntheticSplits::val)
      .def_readonly("test", &SyntheticSplits::test);
  m.def("generate_synthetic", &generate_synthetic);
  m.def("dataset_hash", &dataset_hash);
  m.def("save_dataset", &save_dataset);
  m.def("load_dataset", &load_dataset);
  m.def("load_annotations", &load_annotations);

  py::class_<ModelParams>(m, "ModelParams")
      .def_property_readonly("catalog",
                             [](const ModelParams& p) { return p.catalog; });
  py::class_<RefinedMap>(m, "RefinedMap")
      .def_readonly("finding", &RefinedMap::finding)
      .def_property_readonly("map", [](const RefinedMap& r) { return r.map; });
  py::class_<AttentionStack>(m, "AttentionStack")
      .def_readonly("finding", &AttentionStack::finding)
      .def_property_readonly("maps",
                             [](const AttentionStack& a) { return a.maps; })
      .def("head_map", &AttentionStack::head_map);
  py::class_<PromptOutput>(m, "PromptOutput")
      .def_readonly("logit", &PromptOutput::logit)
      .def_readonly("refined", &PromptOutput::refined)
      .def_readonly("attn", &PromptOutput::attn);
  m.def("forward_prompt", &forward_prompt);
  m.def(
      "init_model",
      [](const FindingCatalog& catalog, std::uint64_t seed) {
        return init_model(ModelConfig{}, catalog, seed);
      },
      py::arg("catalog"), py::arg("seed") = 0);
  m.def("save_checkpoint",
        [](const ModelParams& params, const std::filesystem::path& path) {
          save_checkpoint(params, path);
        });
  m.def("load_checkpoint",
        [](const std::filesystem::path& path) { return load_checkpoint(path); });
  m.def("checkpoint_hash", &checkpoint_hash);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("loss", &TrainConfig::loss)
      .def_readwrite("negative_ratio", &TrainConfig::negative_ratio)
      .def_readwrite("eval_every", &TrainConfig::eval_every)
      .def_property(
          "arm", [](const TrainConfig& c) { return to_string(c.arm); },
          [](TrainConfig& c, const std::string& s) { c.arm = arm_from_string(s); })
      .def_property(
          "init_mode",
          [](const TrainConfig& c) { return to_string(c.init_mode); },
          [](TrainConfig& c, const std::string& s) {
            c.init_mode = init_mode_from_string(s);
          })
      .def("validate", &TrainConfig::validate)
      .def("to_json", [](const TrainConfig& c) { return c.to_json().dump(); })
      .def_static("from_json", &train_config_from_json_str);

  py::class_<TrainState>(m, "TrainState")
      .def_readonly("params", &TrainState::params)
      .def_readonly("epoch", &TrainState::epoch)
      .def_readonly("best_val_max_dice", &TrainState::best_val_max_dice)
      .def_readonly("best_by_dice", &TrainState::best_by_dice)
      .def_property_readonly("history", [](const TrainState& s) {
        return history_to_json(s.history).dump();
      });
  m.def("train_arm", &train_arm,
        py::call_guard<py::gil_scoped_release>());

  py::class_<FindingMetrics>(m, "FindingMetrics")
      .def_readonly("auc", &FindingMetrics::auc)
      .def_readonly("f1", &FindingMetrics::f1)
      .def_readonly("mcc", &FindingMetrics::mcc)
      .def_readonly("dice_at_05", &FindingMetrics::dice_at_05)
      .def_readonly("max_dice", &FindingMetrics::max_dice)
      .def_readonly("hit_rate", &FindingMetrics::hit_rate)
      .def_readonly("n_positive", &FindingMetrics::n_positive);
  py::class_<MetricReport>(m, "MetricReport")
      .def_readonly("per_finding", &MetricReport::per_finding)
      .def_readonly("macro", &MetricReport::macro)
      .def_readonly("n_samples", &MetricReport::n_samples)
      .def("to_json", &MetricReport::to_json_string)
      .def("to_table", &MetricReport::to_table);
  m.def("evaluate", &evaluate, py::arg("params"), py::arg("dataset"),
        py::arg("config_hash") = "");
}
