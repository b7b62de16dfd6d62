// Experiment driver: data generation, training arms, evaluation, ablation
// suites, and report consolidation. Exit codes: 0 success, 1 config error,
// 2 runtime failure.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "amref/data.hpp"
#include "amref/eval.hpp"
#include "amref/io.hpp"
#include "amref/rng.hpp"
#include "amref/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace amref;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

fs::path default_out_root() {
  if (const char* env = std::getenv("AMREF_OUT_ROOT")) return fs::path(env);
  return fs::path("runs");
}

fs::path resolve_out(const std::string& out_flag, const std::string& leaf) {
  if (!out_flag.empty()) return fs::path(out_flag);
  return default_out_root() / leaf;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  try {
    return json::parse(io::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

SyntheticConfig data_config(const json& root) {
  SyntheticConfig cfg = SyntheticConfig::default_benchmark();
  if (!root.contains("data")) return cfg;
  const json& d = root["data"];
  cfg.n_train = d.value("n_train", cfg.n_train);
  cfg.n_val = d.value("n_val", cfg.n_val);
  cfg.n_test = d.value("n_test", cfg.n_test);
  cfg.image_size = d.value("image_size", cfg.image_size);
  cfg.patch_size = d.value("patch_size", cfg.patch_size);
  cfg.co_occurrence = d.value("co_occurrence", cfg.co_occurrence);
  cfg.p_negative = d.value("p_negative", cfg.p_negative);
  cfg.noise = d.value("noise", cfg.noise);
  cfg.context_cue = d.value("context_cue", cfg.context_cue);
  cfg.n_distractors = d.value("n_distractors", cfg.n_distractors);
  cfg.distractor_scale = d.value("distractor_scale", cfg.distractor_scale);
  cfg.seed = d.value("seed", cfg.seed);
  if (d.contains("findings")) {
    cfg.findings.clear();
    for (const auto& f : d["findings"]) {
      SyntheticFinding sf;
      sf.name = f.at("name").get<std::string>();
      sf.family = shape_family_from_string(f.value("family", "disc"));
      sf.size_min = f.value("size_min", sf.size_min);
      sf.size_max = f.value("size_max", sf.size_max);
      sf.intensity_min = f.value("intensity_min", sf.intensity_min);
      sf.intensity_max = f.value("intensity_max", sf.intensity_max);
      sf.prevalence = f.value("prevalence", sf.prevalence);
      cfg.findings.push_back(sf);
    }
  }
  return cfg;
}

TrainConfig train_config(const json& root) {
  if (root.contains("train")) return TrainConfig::from_json(root["train"]);
  return TrainConfig{};
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const json& config, std::uint64_t seed,
                    const json& outputs) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["config_hash"] = io::fnv1a_hex(config.dump());
  m["seed"] = seed;
  m["timestamp"] = timestamp();
  m["outputs"] = outputs;
  io::write_text_file(dir / "run_manifest.json", m.dump(2) + "\n");
}

json metrics_json(const FindingMetrics& m) {
  return json{{"auc", m.auc},           {"f1", m.f1},
              {"mcc", m.mcc},           {"dice_at_05", m.dice_at_05},
              {"max_dice", m.max_dice}, {"hit_rate", m.hit_rate},
              {"n_positive", m.n_positive}};
}

// ---- overlays: grayscale + heat in red + GT contour in green ----
void write_overlay(const fs::path& path, const Matrix& image, const Matrix& heat,
                   const Matrix& mask) {
  int H = static_cast<int>(image.rows()), W = static_cast<int>(image.cols());
  Matrix r = image, g = image, b = image;
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      double a = heat(i, j);
      r(i, j) = std::min(1.0, image(i, j) * (1.0 - a) + a);
      g(i, j) = image(i, j) * (1.0 - 0.6 * a);
      b(i, j) = image(i, j) * (1.0 - 0.6 * a);
      if (mask(i, j) > 0.5) {
        bool edge = i == 0 || j == 0 || i == H - 1 || j == W - 1 ||
                    mask(i - 1, j) < 0.5 || mask(i + 1, j) < 0.5 ||
                    mask(i, j - 1) < 0.5 || mask(i, j + 1) < 0.5;
        if (edge) {
          r(i, j) = 0.0;
          g(i, j) = 1.0;
          b(i, j) = 0.0;
        }
      }
    }
  }
  io::write_ppm(path, r, g, b);
}

int write_overlays(const ModelParams& params, const Dataset& ds,
                   const fs::path& dir, int n_overlays, std::uint64_t seed) {
  fs::create_directories(dir);
  // deterministic selection: shuffle positive (sample, finding) pairs
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& s : ds.samples) {
    for (const auto& [name, mask] : s.masks) pairs.emplace_back(s.id, name);
  }
  Rng rng(seed);
  rng.shuffle(pairs);
  int n = std::min<int>(n_overlays, static_cast<int>(pairs.size()));
  for (int i = 0; i < n; ++i) {
    const auto& [id, finding] = pairs[i];
    const Sample& s = sample_by_id(ds, id);
    PromptOutput out = forward_prompt(params, s.image, finding);
    Matrix heat =
        upsample_nearest(out.refined.map, s.image.height(), s.image.width());
    write_overlay(dir / (id + "_" + finding + ".ppm"), s.image.pixels, heat,
                  s.masks.at(finding));
  }
  return n;
}

// ---- train one run into a directory ----
json run_train(const SyntheticSplits& data, const TrainConfig& cfg,
               const fs::path& dir) {
  fs::create_directories(dir);
  TrainState state = train_arm(data, cfg);

  save_checkpoint(state.params, dir / "checkpoint.json",
                  json{{"arm", to_string(cfg.arm)}, {"kind", "final"}});
  const ModelParams& best =
      state.best_dice_epoch >= 0 ? state.best_by_dice : state.params;
  const ModelParams& best_auc =
      state.best_auc_epoch >= 0 ? state.best_by_auc : state.params;
  save_checkpoint(best, dir / "best_checkpoint.json",
                  json{{"arm", to_string(cfg.arm)},
                       {"kind", "best_val_max_dice"},
                       {"epoch", state.best_dice_epoch}});

  // line-per-epoch structured log
  std::ostringstream hist;
  for (const auto& rec : state.history) {
    json line{{"epoch", rec.epoch},
              {"finding", rec.finding},
              {"cls_loss", rec.cls_loss},
              {"seg_loss", rec.seg_loss}};
    if (rec.val_max_dice >= 0.0) {
      line["val_max_dice"] = rec.val_max_dice;
      line["val_auc"] = rec.val_auc;
    }
    hist << line.dump() << "\n";
  }
  io::write_text_file(dir / "history.jsonl", hist.str());

  MetricReport test_dice = evaluate(best, data.test);
  MetricReport test_auc = evaluate(best_auc, data.test);
  test_dice.method = to_string(cfg.arm);
  test_dice.dataset = "synthetic-test";
  io::write_text_file(dir / "metrics_test.json", test_dice.to_json_string());
  io::write_text_file(dir / "metrics_test.txt", test_dice.to_table());

  json catalog = json::array();
  for (const auto& n : data.train.catalog.names()) catalog.push_back(n);
  json summary;
  summary["arm"] = to_string(cfg.arm);
  summary["seed"] = cfg.seed;
  summary["epochs"] = cfg.epochs;
  summary["catalog"] = catalog;
  summary["config_hash"] = io::fnv1a_hex(cfg.to_json().dump());
  summary["dataset_hash"] = dataset_hash(data);
  summary["checkpoint_hash"] = checkpoint_hash(state.params);
  summary["best_checkpoint_hash"] = checkpoint_hash(best);
  summary["best_val_max_dice"] = state.best_val_max_dice;
  summary["best_dice_epoch"] = state.best_dice_epoch;
  summary["test"] = metrics_json(test_dice.macro);
  summary["test_auc_selected"] = test_auc.macro.auc;
  summary["checkpoint"] = (dir / "checkpoint.json").string();
  summary["best_checkpoint"] = (dir / "best_checkpoint.json").string();
  io::write_text_file(dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

SyntheticSplits dataset_for(const json& config, const std::string& data_dir) {
  if (!data_dir.empty()) return load_dataset(data_dir);
  if (config.contains("dataset_dir")) {
    return load_dataset(config["dataset_dir"].get<std::string>());
  }
  return generate_synthetic(data_config(config));
}

// ---- ablation suites ----
struct Cell {
  std::vector<double> max_dice;
  std::vector<double> auc;
};

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

int cmd_ablate(const std::string& suite, const json& config,
               const fs::path& out_dir, std::uint64_t base_seed) {
  const std::vector<std::uint64_t> seeds{base_seed, base_seed + 1, base_seed + 2};
  struct Row {
    std::string label;
    Cell cell;
  };
  std::vector<Row> rows;

  auto run_cell = [&](const std::string& label, const SyntheticConfig& dc,
                      const TrainConfig& tc) {
    Row row;
    row.label = label;
    for (std::uint64_t seed : seeds) {
      SyntheticConfig d = dc;
      d.seed = seed;
      TrainConfig t = tc;
      t.seed = seed;
      SyntheticSplits data = generate_synthetic(d);
      json summary = run_train(data, t, out_dir / (label + "_seed" + std::to_string(seed)));
      row.cell.max_dice.push_back(summary["test"]["max_dice"].get<double>());
      row.cell.auc.push_back(summary["test"]["auc"].get<double>());
      std::cout << "  " << label << " seed " << seed
                << ": max-dice " << row.cell.max_dice.back() << "\n";
    }
    rows.push_back(std::move(row));
  };

  SyntheticConfig dc = data_config(config);
  TrainConfig tc = train_config(config);

  if (suite == "arms") {
    for (Arm arm : {Arm::Dwarf, Arm::Gain, Arm::ClsOnly, Arm::DirectAttention,
                    Arm::DwarfExpertTeacher}) {
      TrainConfig t = tc;
      t.arm = arm;
      run_cell(to_string(arm), dc, t);
    }
  } else if (suite == "disease_count") {
    for (std::size_t k = 2; k <= dc.findings.size(); ++k) {
      SyntheticConfig d = dc;
      d.findings.assign(dc.findings.begin(), dc.findings.begin() + k);
      run_cell("findings_" + std::to_string(k), d, tc);
    }
  } else if (suite == "init_mode") {
    for (InitMode mode : {InitMode::Iei, InitMode::Random}) {
      TrainConfig t = tc;
      t.init_mode = mode;
      run_cell(to_string(mode), dc, t);
    }
  } else if (suite == "epochs") {
    for (int epochs : {tc.epochs, 2 * tc.epochs}) {
      TrainConfig t = tc;
      t.epochs = epochs;
      run_cell("epochs_" + std::to_string(epochs), dc, t);
    }
  } else if (suite == "w_fp") {
    for (double w : {1.0, 2.0, 4.0}) {
      TrainConfig t = tc;
      t.loss.w_fp = w;
      std::ostringstream label;
      label << "w_fp_" << w;
      run_cell(label.str(), dc, t);
    }
  } else {
    throw ConfigError("unknown ablation suite '" + suite +
                      "' (expected arms, disease_count, init_mode, epochs, w_fp)");
  }

  std::ostringstream table, csv;
  table << "Suite: " << suite << "\n";
  table << "Row  Max Dice (mean±std)  AUC (mean±std)\n";
  csv << "row,max_dice_mean,max_dice_std,auc_mean,auc_std\n";
  for (const auto& row : rows) {
    auto [dm, ds] = mean_std(row.cell.max_dice);
    auto [am, as] = mean_std(row.cell.auc);
    char line[160];
    std::snprintf(line, sizeof line, "%-24s %.4f±%.4f  %.4f±%.4f\n",
                  row.label.c_str(), dm, ds, am, as);
    table << line;
    csv << row.label << "," << dm << "," << ds << "," << am << "," << as << "\n";
  }
  io::write_text_file(out_dir / "table.txt", table.str());
  io::write_text_file(out_dir / "table.csv", csv.str());
  std::cout << table.str();
  write_manifest(out_dir, "ablate " + suite, config, base_seed,
                 json{{"table", (out_dir / "table.txt").string()},
                      {"csv", (out_dir / "table.csv").string()}});
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::vector<json> summaries;
  json catalog;
  for (const auto& dir : run_dirs) {
    fs::path file = fs::path(dir) / "summary.json";
    if (!fs::exists(file)) {
      throw std::runtime_error("missing summary file: " + file.string());
    }
    json s = json::parse(io::read_text_file(file));
    if (catalog.is_null()) {
      catalog = s["catalog"];
    } else if (catalog != s["catalog"]) {
      throw std::runtime_error("conflicting catalogs across runs: " +
                               catalog.dump() + " vs " + s["catalog"].dump());
    }
    summaries.push_back(std::move(s));
  }

  std::ostringstream table, csv;
  table << "Arm  Seed  AUC  F1  MCC  Max Dice  Hit Rate\n";
  csv << "arm,seed,auc,f1,mcc,max_dice,hit_rate\n";
  for (const auto& s : summaries) {
    const json& t = s["test"];
    char line[200];
    std::snprintf(line, sizeof line, "%-22s %-5llu %.4f  %.4f  %.4f  %.4f  %.4f\n",
                  s["arm"].get<std::string>().c_str(),
                  static_cast<unsigned long long>(s["seed"].get<std::uint64_t>()),
                  t["auc"].get<double>(), t["f1"].get<double>(),
                  t["mcc"].get<double>(), t["max_dice"].get<double>(),
                  t["hit_rate"].get<double>());
    table << line;
    csv << s["arm"].get<std::string>() << "," << s["seed"] << "," << t["auc"]
        << "," << t["f1"] << "," << t["mcc"] << "," << t["max_dice"] << ","
        << t["hit_rate"] << "\n";
  }
  fs::create_directories(out_dir);
  io::write_text_file(out_dir / "report.txt", table.str());
  io::write_text_file(out_dir / "report.csv", csv.str());
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"amref: attention-map refinement experiments"};
  app.require_subcommand(1);

  std::string config_path, out_flag, data_dir, checkpoint_path, suite, split =
      "test";
  std::optional<std::uint64_t> seed_flag;
  int n_overlays = 8;
  std::vector<std::string> run_dirs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", seed_flag, "override every seed in the config");
    cmd->add_option("--out", out_flag,
                    "output directory (default: $AMREF_OUT_ROOT/<command>)");
  };

  CLI::App* gen = app.add_subcommand("generate-data", "write a synthetic dataset");
  add_common(gen);
  CLI::App* train = app.add_subcommand("train", "run one training arm");
  add_common(train);
  train->add_option("--data", data_dir, "dataset directory (overrides config)");
  CLI::App* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory (overrides config)");
  eval->add_option("--split", split, "split to evaluate: train|val|test");
  eval->add_option("--overlays", n_overlays, "number of overlay images");
  CLI::App* ablate = app.add_subcommand("ablate", "run an ablation suite");
  add_common(ablate);
  ablate->add_option("--suite", suite,
                     "arms | disease_count | init_mode | epochs | w_fp")
      ->required();
  CLI::App* report = app.add_subcommand("report", "consolidate run summaries");
  report->add_option("--out", out_flag, "output directory");
  report->add_option("runs", run_dirs, "run directories with summary.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    json config = load_config(config_path);

    if (gen->parsed()) {
      SyntheticConfig cfg = data_config(config);
      if (seed_flag) cfg.seed = *seed_flag;
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      fs::path dir = resolve_out(out_flag, "dataset");
      SyntheticSplits splits = generate_synthetic(cfg);
      save_dataset(splits, cfg, dir);
      write_manifest(dir, "generate-data", config, cfg.seed,
                     json{{"dataset", dir.string()},
                          {"dataset_hash", dataset_hash(splits)}});
      std::cout << "wrote dataset to " << dir << " (hash "
                << dataset_hash(splits) << ")\n";
      return 0;
    }

    if (train->parsed()) {
      TrainConfig cfg = train_config(config);
      if (seed_flag) cfg.seed = *seed_flag;
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      SyntheticSplits data = dataset_for(config, data_dir);
      fs::path dir = resolve_out(
          out_flag, "train_" + to_string(cfg.arm) + "_seed" +
                        std::to_string(cfg.seed));
      json summary = run_train(data, cfg, dir);
      write_manifest(dir, "train", config, cfg.seed,
                     json{{"summary", (dir / "summary.json").string()}});
      std::cout << "run complete: test max-dice "
                << summary["test"]["max_dice"].get<double>() << ", auc "
                << summary["test"]["auc"].get<double>() << "\n";
      return 0;
    }

    if (eval->parsed()) {
      ModelParams params = load_checkpoint(checkpoint_path);
      SyntheticSplits data = dataset_for(config, data_dir);
      const Dataset* ds = &data.test;
      if (split == "train") ds = &data.train;
      else if (split == "val") ds = &data.val;
      else if (split != "test") throw ConfigError("unknown split '" + split + "'");
      fs::path dir = resolve_out(out_flag, "evaluate");
      fs::create_directories(dir);
      MetricReport rep = evaluate(params, *ds);
      rep.dataset = "synthetic-" + split;
      io::write_text_file(dir / "metrics.json", rep.to_json_string());
      io::write_text_file(dir / "metrics.txt", rep.to_table());
      std::uint64_t seed = seed_flag.value_or(0);
      int written = write_overlays(params, *ds, dir / "overlays", n_overlays, seed);
      write_manifest(dir, "evaluate", config, seed,
                     json{{"metrics", (dir / "metrics.json").string()},
                          {"overlays", written}});
      std::cout << rep.to_table();
      return 0;
    }

    if (ablate->parsed()) {
      fs::path dir = resolve_out(out_flag, "ablate_" + suite);
      fs::create_directories(dir);
      return cmd_ablate(suite, config, dir, seed_flag.value_or(1));
    }

    if (report->parsed()) {
      return cmd_report(run_dirs, resolve_out(out_flag, "report"));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
