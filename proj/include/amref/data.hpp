#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "amref/model.hpp"

namespace amref {

// One image with its multi-hot labels and per-positive-finding masks.
struct Sample {
  std::string id;
  ImageTensor image;
  Eigen::VectorXd labels;                 // K entries in {0,1}
  std::map<std::string, Matrix> masks;    // finding -> H x W binary mask

  void validate(const FindingCatalog& catalog) const;
};

struct Dataset {
  std::vector<Sample> samples;
  FindingCatalog catalog;
  std::string split;  // train | val | test

  void validate() const;
};

// Per-finding slice of a multi-label dataset. Positives are exhaustive;
// negatives are a seeded sample used by the classification loss only.
struct SingleLabelView {
  std::string finding;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
};

enum class ShapeFamily { Disc, Bar, Ring };
ShapeFamily shape_family_from_string(const std::string& s);
std::string to_string(ShapeFamily f);

struct SyntheticFinding {
  std::string name;
  ShapeFamily family = ShapeFamily::Disc;
  double size_min = 6.0;
  double size_max = 12.0;
  double intensity_min = 0.35;
  double intensity_max = 0.6;
  // Relative sampling weight: scales both the chance of being the primary
  // finding of a sample and the chance of joining via co-occurrence. Values
  // below 1 make the finding rare.
  double prevalence = 1.0;
};

struct SyntheticConfig {
  int n_train = 200;
  int n_val = 50;
  int n_test = 50;
  int image_size = 64;
  int patch_size = 8;
  std::vector<SyntheticFinding> findings;
  double co_occurrence = 0.3;  // chance each extra finding joins a sample
  double p_negative = 0.25;    // chance a sample carries no finding at all
  double noise = 0.05;
  // Amplitude of a global low-frequency stripe pattern added whenever a
  // finding is present, with a finding-specific orientation. The pattern is
  // classification evidence spread over the whole image, but it is not part
  // of the ground-truth mask, so localization has to single out the lesion.
  double context_cue = 0.0;
  // Distractors: each positive finding also stamps this many smaller copies
  // of its shape elsewhere in the image, at full intensity. They correlate
  // with the label (classification evidence) but stay outside the
  // ground-truth mask, so a good map must suppress them.
  int n_distractors = 0;
  double distractor_scale = 0.5;  // size factor for distractors
  std::uint64_t seed = 0;

  void validate() const;
  static SyntheticConfig default_benchmark();  // 3 findings, 64x64
};

struct SyntheticSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

SyntheticSplits generate_synthetic(const SyntheticConfig& cfg);

// Even-odd scanline fill; a pixel belongs to the mask iff its center
// (x+0.5, y+0.5) is inside the polygon.
Matrix polygon_to_mask(const std::vector<std::pair<double, double>>& vertices,
                       int height, int width);

Matrix bbox_to_mask(double x0, double y0, double x1, double y1, int height,
                    int width);

// Reads a JSON annotation file: a list of records with file_name, syms,
// and per-sym polygons and/or boxes. Images are loaded from an images/
// directory next to the annotation file when present.
Dataset load_annotations(const std::filesystem::path& path,
                         const FindingCatalog& catalog);

std::vector<SingleLabelView> decompose(const Dataset& ds, double negative_ratio,
                                       std::uint64_t seed);

// Patch-grid target for the segmentation loss: a patch counts as positive
// when at least `frac` of its pixels are inside the mask.
Matrix downsample_mask(const Matrix& mask, int patch_size, double frac = 0.25);

void save_dataset(const SyntheticSplits& splits, const SyntheticConfig& cfg,
                  const std::filesystem::path& dir);
SyntheticSplits load_dataset(const std::filesystem::path& dir);

// Content hash over labels, masks and images of all splits.
std::string dataset_hash(const SyntheticSplits& splits);

const Sample& sample_by_id(const Dataset& ds, const std::string& id);

}  // namespace amref
