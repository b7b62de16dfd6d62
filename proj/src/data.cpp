#include "amref/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "amref/io.hpp"
#include "amref/rng.hpp"

namespace amref {

using nlohmann::json;

void Sample::validate(const FindingCatalog& catalog) const {
  if (labels.size() != catalog.size()) {
    throw std::invalid_argument("sample " + id + ": label length mismatch");
  }
  for (int f = 0; f < catalog.size(); ++f) {
    const std::string& name = catalog.names()[f];
    auto it = masks.find(name);
    bool has_mask = it != masks.end() && it->second.sum() > 0.0;
    if ((labels[f] != 0.0) != has_mask) {
      throw std::invalid_argument("sample " + id + ": label/mask mismatch for '" +
                                  name + "'");
    }
    if (it != masks.end() &&
        (it->second.rows() != image.pixels.rows() ||
         it->second.cols() != image.pixels.cols())) {
      throw std::invalid_argument("sample " + id + ": mask shape mismatch");
    }
  }
}

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) {
      throw std::invalid_argument("duplicate sample id '" + s.id + "' in split " +
                                  split);
    }
    s.validate(catalog);
  }
}

ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "disc") return ShapeFamily::Disc;
  if (s == "bar") return ShapeFamily::Bar;
  if (s == "ring") return ShapeFamily::Ring;
  throw std::invalid_argument("unknown shape family '" + s + "'");
}

std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::Disc: return "disc";
    case ShapeFamily::Bar: return "bar";
    case ShapeFamily::Ring: return "ring";
  }
  return "?";
}

void SyntheticConfig::validate() const {
  if (n_train <= 0 || n_val <= 0 || n_test <= 0) {
    throw std::invalid_argument("data.n_*: counts must be > 0");
  }
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0) {
    throw std::invalid_argument(
        "data.image_size must be a positive multiple of data.patch_size");
  }
  if (findings.empty()) throw std::invalid_argument("data.findings is empty");
  if (co_occurrence < 0.0 || co_occurrence > 1.0) {
    throw std::invalid_argument("data.co_occurrence must be in [0,1]");
  }
  if (n_distractors < 0) {
    throw std::invalid_argument("data.n_distractors must be >= 0");
  }
  if (distractor_scale <= 0.0 || distractor_scale > 1.0) {
    throw std::invalid_argument("data.distractor_scale must be in (0,1]");
  }
  for (const auto& f : findings) {
    if (f.prevalence <= 0.0) {
      throw std::invalid_argument("data: prevalence must be > 0 for '" +
                                  f.name + "'");
    }
    if (f.size_min <= 0.0 || f.size_max < f.size_min) {
      throw std::invalid_argument("data: bad size range for '" + f.name + "'");
    }
    if (2.0 * f.size_max + 2.0 > image_size) {
      throw std::invalid_argument("data: lesion '" + f.name +
                                  "' does not fit in the image");
    }
  }
}

SyntheticConfig SyntheticConfig::default_benchmark() {
  SyntheticConfig cfg;
  // Contrast differs per finding on purpose: uniform bright shapes let a
  // single "any lesion" map score well for every finding, which hides the
  // differences between the training arms.
  cfg.findings = {
      {"disc", ShapeFamily::Disc, 6.0, 11.0, 0.4, 0.65},
      {"bar", ShapeFamily::Bar, 9.0, 14.0, 0.16, 0.28},
      {"ring", ShapeFamily::Ring, 7.0, 12.0, 0.08, 0.16},
  };
  cfg.co_occurrence = 0.6;
  return cfg;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Lesion {
  Matrix mask;
  double amplitude;
};

Lesion draw_lesion(const SyntheticFinding& f, int n, Rng& rng) {
  double size = rng.uniform(f.size_min, f.size_max);
  double margin = size + 1.0;
  double cx = rng.uniform(margin, n - margin);
  double cy = rng.uniform(margin, n - margin);
  Lesion les;
  les.amplitude = rng.uniform(f.intensity_min, f.intensity_max);
  les.mask = Matrix::Zero(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      bool inside = false;
      switch (f.family) {
        case ShapeFamily::Disc:
          inside = dx * dx + dy * dy <= size * size;
          break;
        case ShapeFamily::Bar: {
          double half_len = size, half_th = std::max(2.0, size / 3.0);
          inside = std::abs(dx) <= half_len && std::abs(dy) <= half_th;
          break;
        }
        case ShapeFamily::Ring: {
          double r2 = dx * dx + dy * dy;
          double inner = 0.55 * size;
          inside = r2 <= size * size && r2 >= inner * inner;
          break;
        }
      }
      if (inside) les.mask(y, x) = 1.0;
    }
  }
  return les;
}

Dataset generate_split(const SyntheticConfig& cfg, const FindingCatalog& catalog,
                       const std::string& split, int count,
                       std::uint64_t seed) {
  Rng rng(seed);
  int n = cfg.image_size;
  int K = catalog.size();
  Dataset ds;
  ds.catalog = catalog;
  ds.split = split;
  for (int i = 0; i < count; ++i) {
    Sample s;
    {
      std::ostringstream id;
      id << split << "_" << std::setw(4) << std::setfill('0') << i;
      s.id = id.str();
    }
    s.labels = Eigen::VectorXd::Zero(K);
    s.image.pixels = Matrix::Constant(n, n, 0.15);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        s.image.pixels(y, x) += cfg.noise * rng.gaussian();

    std::vector<int> positives;
    if (rng.uniform() >= cfg.p_negative) {
      double total = 0.0;
      for (const auto& f : cfg.findings) total += f.prevalence;
      double pick = rng.uniform(0.0, total);
      int primary = 0;
      for (int f = 0; f < K; ++f) {
        pick -= cfg.findings[f].prevalence;
        if (pick <= 0.0) { primary = f; break; }
      }
      positives.push_back(primary);
      for (int f = 0; f < K; ++f) {
        if (f != primary &&
            rng.uniform() < cfg.co_occurrence * cfg.findings[f].prevalence) {
          positives.push_back(f);
        }
      }
      std::sort(positives.begin(), positives.end());
    }
    for (int f : positives) {
      Lesion les = draw_lesion(cfg.findings[f], n, rng);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (les.mask(y, x) > 0.0) s.image.pixels(y, x) += les.amplitude;
      for (int d = 0; d < cfg.n_distractors; ++d) {
        SyntheticFinding small = cfg.findings[f];
        small.size_min *= cfg.distractor_scale;
        small.size_max *= cfg.distractor_scale;
        Lesion dis = draw_lesion(small, n, rng);
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x)
            if (dis.mask(y, x) > 0.0 && les.mask(y, x) == 0.0)
              s.image.pixels(y, x) += dis.amplitude;
      }
      if (cfg.context_cue > 0.0) {
        // global stripes with a finding-specific orientation; evidence for
        // the label everywhere, but deliberately absent from the mask
        double ang = 2.0 * kPi * (f + 1) / (K + 1);
        double kx = std::cos(ang), ky = std::sin(ang);
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x)
            s.image.pixels(y, x) += cfg.context_cue *
                std::sin(4.0 * kPi * (kx * x + ky * y) / n);
      }
      s.labels[f] = 1.0;
      s.masks[catalog.names()[f]] = les.mask;
    }
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        s.image.pixels(y, x) = io::quantize16(s.image.pixels(y, x));
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace

SyntheticSplits generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::vector<std::string> names;
  for (const auto& f : cfg.findings) names.push_back(f.name);
  FindingCatalog catalog(names);
  SyntheticSplits out;
  out.train = generate_split(cfg, catalog, "train", cfg.n_train, cfg.seed * 1000003 + 1);
  out.val = generate_split(cfg, catalog, "val", cfg.n_val, cfg.seed * 1000003 + 2);
  out.test = generate_split(cfg, catalog, "test", cfg.n_test, cfg.seed * 1000003 + 3);
  return out;
}

Matrix polygon_to_mask(const std::vector<std::pair<double, double>>& vertices,
                       int height, int width) {
  if (vertices.size() < 3) {
    throw std::invalid_argument("polygon needs at least 3 vertices");
  }
  double area2 = 0.0;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    auto [x1, y1] = vertices[i];
    auto [x2, y2] = vertices[(i + 1) % vertices.size()];
    area2 += x1 * y2 - x2 * y1;
  }
  Matrix mask = Matrix::Zero(height, width);
  if (std::abs(area2) < 1e-12) {
    std::cerr << "warning: degenerate polygon, producing empty mask\n";
    return mask;
  }
  for (int r = 0; r < height; ++r) {
    double yc = r + 0.5;
    std::vector<double> xs;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      auto [x1, y1] = vertices[i];
      auto [x2, y2] = vertices[(i + 1) % vertices.size()];
      if ((y1 <= yc && yc < y2) || (y2 <= yc && yc < y1)) {
        xs.push_back(x1 + (yc - y1) / (y2 - y1) * (x2 - x1));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      for (int c = 0; c < width; ++c) {
        double xc = c + 0.5;
        if (xc >= xs[i] && xc < xs[i + 1]) mask(r, c) = 1.0;
      }
    }
  }
  return mask;
}

Matrix bbox_to_mask(double x0, double y0, double x1, double y1, int height,
                    int width) {
  if (x0 >= x1 || y0 >= y1) {
    throw std::invalid_argument("bbox: requires x0 < x1 and y0 < y1");
  }
  x0 = std::max(x0, 0.0);
  y0 = std::max(y0, 0.0);
  x1 = std::min(x1, static_cast<double>(width));
  y1 = std::min(y1, static_cast<double>(height));
  if (x0 >= x1 || y0 >= y1) {
    throw std::invalid_argument("bbox: zero area after clipping to frame");
  }
  Matrix mask = Matrix::Zero(height, width);
  bool any = false;
  for (int r = 0; r < height; ++r) {
    double yc = r + 0.5;
    if (yc < y0 || yc >= y1) continue;
    for (int c = 0; c < width; ++c) {
      double xc = c + 0.5;
      if (xc >= x0 && xc < x1) {
        mask(r, c) = 1.0;
        any = true;
      }
    }
  }
  if (!any) throw std::invalid_argument("bbox: no pixel centers inside the box");
  return mask;
}

Dataset load_annotations(const std::filesystem::path& path,
                         const FindingCatalog& catalog) {
  json root;
  try {
    root = json::parse(io::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("annotation file " + path.string() +
                             " is not valid JSON: " + e.what());
  }
  if (!root.is_array()) {
    throw std::runtime_error("annotation file must be a JSON array of records");
  }

  std::set<std::string> unknown;
  for (const auto& rec : root) {
    if (rec.contains("syms")) {
      for (const auto& s : rec["syms"]) {
        std::string name = s.get<std::string>();
        if (!catalog.contains(name)) unknown.insert(name);
      }
    }
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& n : unknown) list += (list.empty() ? "" : ", ") + n;
    throw std::runtime_error("annotations contain findings absent from the catalog: " +
                             list);
  }

  Dataset ds;
  ds.catalog = catalog;
  ds.split = "annotated";
  std::set<std::string> seen;
  for (std::size_t idx = 0; idx < root.size(); ++idx) {
    const json& rec = root[idx];
    auto fail = [&](const std::string& why) {
      throw std::runtime_error("annotation record " + std::to_string(idx) + ": " +
                               why);
    };
    if (!rec.is_object() || !rec.contains("file_name") ||
        !rec["file_name"].is_string()) {
      fail("missing file_name");
    }
    std::string file_name = rec["file_name"].get<std::string>();
    if (!seen.insert(file_name).second) fail("duplicate file name " + file_name);
    if (!rec.contains("syms") || !rec["syms"].is_array()) fail("missing syms");

    int H = rec.value("height", 64);
    int W = rec.value("width", 64);

    Sample s;
    s.id = file_name;
    std::filesystem::path img_path = path.parent_path() / "images" / file_name;
    if (std::filesystem::exists(img_path)) {
      s.image.pixels = io::read_pgm16(img_path);
      H = s.image.height();
      W = s.image.width();
    } else {
      s.image.pixels = Matrix::Zero(H, W);
    }
    s.labels = Eigen::VectorXd::Zero(catalog.size());

    std::size_t n_syms = rec["syms"].size();
    const json empty = json::array();
    const json& polys = rec.contains("polygons") ? rec["polygons"] : empty;
    const json& boxes = rec.contains("boxes") ? rec["boxes"] : empty;
    if (!polys.empty() && polys.size() != n_syms) {
      fail("polygons must align with syms");
    }
    if (!boxes.empty() && boxes.size() != n_syms) fail("boxes must align with syms");

    for (std::size_t i = 0; i < n_syms; ++i) {
      std::string name = rec["syms"][i].get<std::string>();
      Matrix m = Matrix::Zero(H, W);
      bool got_shape = false;
      if (!polys.empty() && !polys[i].is_null()) {
        std::vector<std::pair<double, double>> verts;
        for (const auto& v : polys[i]) {
          if (!v.is_array() || v.size() != 2) fail("polygon vertex must be [x,y]");
          verts.emplace_back(v[0].get<double>(), v[1].get<double>());
        }
        if (verts.size() < 3) fail("polygon with fewer than 3 vertices");
        m = m.cwiseMax(polygon_to_mask(verts, H, W));
        got_shape = true;
      }
      if (!boxes.empty() && !boxes[i].is_null()) {
        const auto& b = boxes[i];
        if (!b.is_array() || b.size() != 4) fail("box must be [x0,y0,x1,y1]");
        m = m.cwiseMax(bbox_to_mask(b[0].get<double>(), b[1].get<double>(),
                                    b[2].get<double>(), b[3].get<double>(), H, W));
        got_shape = true;
      }
      if (!got_shape) fail("sym '" + name + "' has neither polygon nor box");
      if (m.sum() == 0.0) {
        std::cerr << "warning: record " << idx << " sym '" << name
                  << "' rasterizes to an empty mask, treated as negative\n";
        continue;
      }
      int f = catalog.index(name);
      s.labels[f] = 1.0;
      auto it = s.masks.find(name);
      if (it == s.masks.end()) {
        s.masks.emplace(name, std::move(m));
      } else {
        it->second = it->second.cwiseMax(m);
      }
    }
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

std::vector<SingleLabelView> decompose(const Dataset& ds, double negative_ratio,
                                       std::uint64_t seed) {
  if (negative_ratio < 0.0) {
    throw std::invalid_argument("negative_ratio must be >= 0");
  }
  std::vector<SingleLabelView> views;
  for (int f = 0; f < ds.catalog.size(); ++f) {
    SingleLabelView view;
    view.finding = ds.catalog.names()[f];
    std::vector<std::string> pool;
    for (const auto& s : ds.samples) {
      if (s.labels[f] != 0.0) {
        view.positives.push_back(s.id);
      } else {
        pool.push_back(s.id);
      }
    }
    if (view.positives.empty()) {
      std::cerr << "warning: finding '" << view.finding
                << "' has no positive samples; view is empty\n";
      views.push_back(std::move(view));
      continue;
    }
    std::size_t want = static_cast<std::size_t>(
        std::llround(negative_ratio * static_cast<double>(view.positives.size())));
    want = std::min(want, pool.size());
    Rng rng(seed + static_cast<std::uint64_t>(f) * 7919u);
    rng.shuffle(pool);
    view.negatives.assign(pool.begin(), pool.begin() + want);
    views.push_back(std::move(view));
  }
  return views;
}

Matrix downsample_mask(const Matrix& mask, int patch_size, double frac) {
  int h = static_cast<int>(mask.rows()) / patch_size;
  int w = static_cast<int>(mask.cols()) / patch_size;
  Matrix grid = Matrix::Zero(h, w);
  double denom = static_cast<double>(patch_size * patch_size);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double s = mask.block(i * patch_size, j * patch_size, patch_size, patch_size)
                     .sum();
      grid(i, j) = (s / denom >= frac) ? 1.0 : 0.0;
    }
  }
  return grid;
}

namespace {

json finding_to_json(const SyntheticFinding& f) {
  return json{{"name", f.name},
              {"family", to_string(f.family)},
              {"size_min", f.size_min},
              {"size_max", f.size_max},
              {"intensity_min", f.intensity_min},
              {"intensity_max", f.intensity_max},
              {"prevalence", f.prevalence}};
}

SyntheticFinding finding_from_json(const json& j) {
  SyntheticFinding f;
  f.name = j.at("name").get<std::string>();
  f.family = shape_family_from_string(j.at("family").get<std::string>());
  f.size_min = j.value("size_min", f.size_min);
  f.size_max = j.value("size_max", f.size_max);
  f.intensity_min = j.value("intensity_min", f.intensity_min);
  f.intensity_max = j.value("intensity_max", f.intensity_max);
  f.prevalence = j.value("prevalence", f.prevalence);
  return f;
}

json config_to_json(const SyntheticConfig& cfg) {
  json findings = json::array();
  for (const auto& f : cfg.findings) findings.push_back(finding_to_json(f));
  return json{{"n_train", cfg.n_train},       {"n_val", cfg.n_val},
              {"n_test", cfg.n_test},         {"image_size", cfg.image_size},
              {"patch_size", cfg.patch_size}, {"findings", findings},
              {"co_occurrence", cfg.co_occurrence},
              {"p_negative", cfg.p_negative}, {"noise", cfg.noise},
              {"context_cue", cfg.context_cue},
              {"n_distractors", cfg.n_distractors},
              {"distractor_scale", cfg.distractor_scale},
              {"seed", cfg.seed}};
}

json split_to_json(const Dataset& ds) {
  json arr = json::array();
  for (const auto& s : ds.samples) {
    json rec;
    rec["id"] = s.id;
    rec["image"] = "images/" + s.id + ".pgm";
    json labels = json::array();
    for (Eigen::Index f = 0; f < s.labels.size(); ++f) {
      labels.push_back(static_cast<int>(s.labels[f]));
    }
    rec["labels"] = labels;
    json masks = json::object();
    for (const auto& [name, m] : s.masks) {
      masks[name] = "masks/" + name + "/" + s.id + ".pgm";
    }
    rec["masks"] = masks;
    arr.push_back(rec);
  }
  return arr;
}

}  // namespace

void save_dataset(const SyntheticSplits& splits, const SyntheticConfig& cfg,
                  const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  json manifest;
  manifest["format"] = "amref-dataset-v1";
  manifest["seed"] = cfg.seed;
  manifest["config"] = config_to_json(cfg);
  json catalog = json::array();
  for (const auto& n : splits.train.catalog.names()) catalog.push_back(n);
  manifest["catalog"] = catalog;
  for (const Dataset* ds : {&splits.train, &splits.val, &splits.test}) {
    for (const auto& s : ds->samples) {
      io::write_pgm16(dir / "images" / (s.id + ".pgm"), s.image.pixels);
      for (const auto& [name, m] : s.masks) {
        fs::create_directories(dir / "masks" / name);
        io::write_mask_pgm(dir / "masks" / name / (s.id + ".pgm"), m);
      }
    }
    manifest["splits"][ds->split] = split_to_json(*ds);
  }
  manifest["data_hash"] = dataset_hash(splits);
  io::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

Dataset load_split(const std::filesystem::path& dir, const json& manifest,
                   const FindingCatalog& catalog, const std::string& split) {
  Dataset ds;
  ds.catalog = catalog;
  ds.split = split;
  for (const auto& rec : manifest.at("splits").at(split)) {
    Sample s;
    s.id = rec.at("id").get<std::string>();
    s.image.pixels = io::read_pgm16(dir / rec.at("image").get<std::string>());
    s.labels = Eigen::VectorXd::Zero(catalog.size());
    const auto& labels = rec.at("labels");
    for (int f = 0; f < catalog.size(); ++f) {
      s.labels[f] = labels.at(f).get<int>();
    }
    for (const auto& [name, path] : rec.at("masks").items()) {
      s.masks[name] = io::read_mask_pgm(dir / path.get<std::string>());
    }
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace

SyntheticSplits load_dataset(const std::filesystem::path& dir) {
  json manifest = json::parse(io::read_text_file(dir / "manifest.json"));
  if (manifest.value("format", "") != "amref-dataset-v1") {
    throw std::runtime_error("not an amref dataset: " + dir.string());
  }
  std::vector<std::string> names;
  for (const auto& n : manifest.at("catalog")) names.push_back(n.get<std::string>());
  FindingCatalog catalog(names);
  SyntheticSplits out;
  out.train = load_split(dir, manifest, catalog, "train");
  out.val = load_split(dir, manifest, catalog, "val");
  out.test = load_split(dir, manifest, catalog, "test");
  return out;
}

std::string dataset_hash(const SyntheticSplits& splits) {
  std::ostringstream ss;
  ss.precision(17);
  for (const Dataset* ds : {&splits.train, &splits.val, &splits.test}) {
    ss << ds->split << "|";
    for (const auto& s : ds->samples) {
      ss << s.id << ";";
      for (Eigen::Index f = 0; f < s.labels.size(); ++f) ss << s.labels[f];
      for (const auto& [name, m] : s.masks) {
        ss << name << ":";
        for (Eigen::Index i = 0; i < m.size(); ++i) {
          ss << (m(i / m.cols(), i % m.cols()) > 0.5 ? '1' : '0');
        }
      }
      for (Eigen::Index r = 0; r < s.image.pixels.rows(); ++r)
        for (Eigen::Index c = 0; c < s.image.pixels.cols(); ++c)
          ss << s.image.pixels(r, c) << ",";
    }
  }
  return io::fnv1a_hex(ss.str());
}

const Sample& sample_by_id(const Dataset& ds, const std::string& id) {
  for (const auto& s : ds.samples) {
    if (s.id == id) return s;
  }
  throw std::invalid_argument("sample id '" + id + "' not found in split " +
                              ds.split);
}

}  // namespace amref
