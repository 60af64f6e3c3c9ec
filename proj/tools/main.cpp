// pyrd: adaptive-fusion image-pyramid crowd counting tool.
//
// Subcommands: synth, gt, train, eval, predict, inspect.
// Exit codes: 0 success, 2 usage/input error, 3 runtime failure.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pyrd/errors.hpp"
#include "pyrd/evaluation.hpp"
#include "pyrd/image_io.hpp"
#include "pyrd/network.hpp"
#include "pyrd/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw pyrd::IoError("cannot checksum '" + path + "'");
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!is) break;
  }
  return h;
}

// One manifest per run: what ran, with which inputs, and checksums of what
// it produced. Re-running with the same inputs must reproduce the artifact
// checksums exactly (single-threaded).
class Manifest {
 public:
  Manifest(std::string command, const std::string& out_dir)
      : out_dir_(out_dir) {
    j_["command"] = std::move(command);
    j_["started"] = iso_now();
  }
  json& inputs() { return j_["inputs"]; }
  json& extra() { return j_; }
  void add_output(const std::string& path) { outputs_.push_back(path); }

  void write() {
    j_["finished"] = iso_now();
    json outs = json::array();
    for (const std::string& p : outputs_) {
      char sum[24];
      std::snprintf(sum, sizeof(sum), "%016llx",
                    static_cast<unsigned long long>(fnv1a64_file(p)));
      outs.push_back({{"path", fs::path(p).filename().string()}, {"fnv1a64", sum}});
    }
    j_["outputs"] = outs;
    std::ofstream os(fs::path(out_dir_) / "manifest.json");
    if (!os) throw pyrd::IoError("cannot write manifest in '" + out_dir_ + "'");
    os << j_.dump(2) << "\n";
  }

 private:
  std::string out_dir_;
  json j_;
  std::vector<std::string> outputs_;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw pyrd::IoError("cannot create output directory '" + dir + "'");
  }
}

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw pyrd::InputError("cannot open '" + path + "'");
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw pyrd::InputError("bad JSON in '" + path + "': " + e.what());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw pyrd::InputError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Shared loaders
// ---------------------------------------------------------------------------

pyrd::SyntheticSceneSpec scene_spec_from_json(const json& j) {
  pyrd::SyntheticSceneSpec spec;
  try {
    spec.h = j.value("height", spec.h);
    spec.w = j.value("width", spec.w);
    spec.count_min = j.value("count_min", spec.count_min);
    spec.count_max = j.value("count_max", spec.count_max);
    spec.size0 = j.value("size_base", spec.size0);
    spec.size_gradient = j.value("size_gradient", spec.size_gradient);
    spec.blob_intensity = j.value("blob_intensity", spec.blob_intensity);
    spec.bg_level = j.value("bg_level", spec.bg_level);
    spec.noise_std = j.value("noise_std", spec.noise_std);
    spec.seed = j.value("seed", spec.seed);
  } catch (const json::exception& e) {
    throw pyrd::InputError(std::string("bad scene spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

// Loads image/annotation pairs: every foo.pgm with a foo.json next to it.
pyrd::Dataset load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw pyrd::InputError("'" + dir + "' is not a directory");
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".pgm") images.push_back(entry.path());
  }
  std::sort(images.begin(), images.end());
  pyrd::Dataset ds;
  for (const fs::path& img_path : images) {
    fs::path ann_path = img_path;
    ann_path.replace_extension(".json");
    if (!fs::exists(ann_path)) continue;
    pyrd::Sample s;
    s.name = img_path.stem().string();
    s.image = pyrd::read_pgm(img_path.string());
    const pyrd::AnnotationFile ann = pyrd::read_annotations(ann_path.string());
    s.points.points = ann.points;
    s.points.h = s.image.h;
    s.points.w = s.image.w;
    ds.push_back(std::move(s));
  }
  if (ds.empty()) {
    throw pyrd::InputError("no .pgm/.json pairs found in '" + dir + "'");
  }
  return ds;
}

pyrd::NetworkConfig backbone_from_json(const json& j) {
  if (j.is_string()) return pyrd::builtin_config(j.get<std::string>());
  if (j.is_object() && j.contains("file")) {
    return pyrd::config_from_json(read_text(j.at("file").get<std::string>()));
  }
  throw pyrd::InputError("'backbone' must be a preset name or {\"file\": path}");
}

pyrd::GtOptions gt_options_from_json(const json& j) {
  pyrd::GtOptions opt;
  if (j.is_null()) return opt;
  const std::string mode = j.value("mode", "fixed");
  if (mode == "adaptive") {
    opt.adaptive = true;
    opt.adaptive_opt.k = j.value("k", opt.adaptive_opt.k);
    opt.adaptive_opt.beta = j.value("beta", opt.adaptive_opt.beta);
  } else if (mode == "fixed") {
    opt.sigma = j.value("sigma", opt.sigma);
  } else {
    throw pyrd::InputError("gt mode must be 'fixed' or 'adaptive', got '" + mode + "'");
  }
  return opt;
}

pyrd::PyramidModel load_model(const std::string& weights, const std::string& config_file,
                              const std::vector<float>& scales) {
  if (!fs::exists(weights)) throw pyrd::InputError("weight file '" + weights + "' not found");
  if (!config_file.empty()) {
    // Custom backbone: rebuild the model from the header, then load into it.
    const pyrd::NetworkConfig cfg = pyrd::config_from_json(read_text(config_file));
    const pyrd::WeightFileInfo info = pyrd::read_weight_file_info(weights);
    const std::vector<float> use_scales =
        !scales.empty() ? scales : pyrd::default_scales(info.num_scales);
    pyrd::PyramidModel model = pyrd::make_pyramid_model(cfg, use_scales, info.mode, 0);
    pyrd::load_weights_into(model, weights);
    return model;
  }
  if (!scales.empty()) return pyrd::load_weights(weights, &scales);
  return pyrd::load_weights(weights);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  const json j = load_json_file(spec_path);
  const pyrd::SyntheticSceneSpec spec = scene_spec_from_json(j);
  int n_images = 0;
  try {
    n_images = j.at("n_images").get<int>();
  } catch (const json::exception&) {
    throw pyrd::InputError("scene spec needs an integer 'n_images' field");
  }
  const pyrd::Dataset ds = pyrd::generate_synthetic_dataset(spec, n_images);

  ensure_dir(out_dir);
  Manifest manifest("synth", out_dir);
  manifest.inputs() = {{"spec", spec_path}, {"seed", spec.seed}, {"n_images", n_images}};
  for (const pyrd::Sample& s : ds) {
    const std::string img_path = (fs::path(out_dir) / (s.name + ".pgm")).string();
    const std::string ann_path = (fs::path(out_dir) / (s.name + ".json")).string();
    pyrd::write_pgm(img_path, s.image);
    pyrd::write_annotations(ann_path, {s.name + ".pgm", s.points.points});
    manifest.add_output(img_path);
    manifest.add_output(ann_path);
  }
  manifest.write();
  std::cout << "wrote " << ds.size() << " images to " << out_dir << "\n";
  return 0;
}

int cmd_gt(const std::string& ann_dir, const std::string& out_dir, const std::string& mode,
           double sigma, int k, double beta) {
  if (!fs::is_directory(ann_dir)) {
    throw pyrd::InputError("'" + ann_dir + "' is not a directory");
  }
  pyrd::GtOptions opt;
  if (mode == "adaptive") {
    opt.adaptive = true;
    opt.adaptive_opt.k = k;
    opt.adaptive_opt.beta = beta;
  } else if (mode == "fixed") {
    opt.sigma = sigma;
  } else {
    throw pyrd::InputError("--mode must be fixed or adaptive");
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(ann_dir)) {
    if (entry.path().extension() == ".json" &&
        entry.path().filename() != "manifest.json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw pyrd::InputError("no annotation files in '" + ann_dir + "'");

  ensure_dir(out_dir);
  Manifest manifest("gt", out_dir);
  manifest.inputs() = {{"annotations", ann_dir},
                       {"mode", mode},
                       {"sigma", sigma},
                       {"k", k},
                       {"beta", beta}};
  json masses = json::object();
  std::vector<std::string> errors;
  double total_mass = 0.0;

  for (const fs::path& f : files) {
    try {
      const pyrd::AnnotationFile ann = pyrd::read_annotations(f.string());
      fs::path img_path = fs::path(ann_dir) / ann.image;
      if (!fs::exists(img_path)) {
        img_path = f;
        img_path.replace_extension(".pgm");
      }
      if (!fs::exists(img_path)) {
        throw pyrd::InputError("image for '" + f.filename().string() + "' not found");
      }
      const pyrd::Tensor4 img = pyrd::read_pgm(img_path.string());
      pyrd::PointAnnotations pts;
      pts.points = ann.points;
      pts.h = img.h;
      pts.w = img.w;
      if (opt.adaptive && pts.points.size() == 1) {
        std::cerr << "warning: " << f.filename().string()
                  << " has a single point; using fallback sigma "
                  << fmt6(opt.adaptive_opt.sigma_fallback) << "\n";
      }
      const pyrd::DensityMap d = opt.adaptive
                                     ? pyrd::generate_adaptive(pts, opt.adaptive_opt)
                                     : pyrd::generate_fixed(pts, opt.sigma);
      const std::string csv_path =
          (fs::path(out_dir) / (f.stem().string() + ".csv")).string();
      pyrd::write_density_csv(csv_path, d);
      manifest.add_output(csv_path);
      masses[f.stem().string()] = d.total();
      total_mass += d.total();
    } catch (const std::exception& e) {
      errors.push_back(f.filename().string() + ": " + e.what());
    }
  }

  manifest.extra()["masses"] = masses;
  manifest.extra()["total_mass"] = total_mass;
  manifest.write();
  std::cout << "total mass " << fmt6(total_mass) << " over "
            << masses.size() << " files\n";
  if (!errors.empty()) {
    for (const std::string& e : errors) std::cerr << "error: " << e << "\n";
    return 2;
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& val_dir, bool resume,
              int threads) {
  pyrd::set_num_threads(threads);
  const json j = load_json_file(config_path);

  pyrd::TrainConfig cfg;
  try {
    cfg.patch_size = j.value("patch_size", cfg.patch_size);
    cfg.target_size = j.value("target_size", cfg.target_size);
    cfg.density_scale = j.value("density_scale", cfg.density_scale);
    cfg.lr_initial = j.value("lr_initial", cfg.lr_initial);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.lr_decay_factor = j.value("lr_decay_factor", cfg.lr_decay_factor);
    cfg.lr_decay_every = j.value("lr_decay_every", cfg.lr_decay_every);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.adam_warm_epochs = j.value("adam_warm_epochs", cfg.adam_warm_epochs);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.hflip = j.value("hflip", cfg.hflip);
  } catch (const json::exception& e) {
    throw pyrd::InputError(std::string("bad train config: ") + e.what());
  }
  cfg.validate();

  const pyrd::NetworkConfig backbone = backbone_from_json(j.value("backbone", json("FCN-7c")));
  std::vector<float> scales = {1.0f};
  if (j.contains("scales")) scales = j.at("scales").get<std::vector<float>>();
  const pyrd::FusionMode mode =
      pyrd::fusion_mode_from_string(j.value("fusion_mode", "adaptive"));

  pyrd::Dataset ds = load_dataset(data_dir);
  const pyrd::GtOptions gt_opt = gt_options_from_json(j.value("gt", json()));
  pyrd::attach_ground_truth(ds, gt_opt);
  pyrd::Dataset val;
  if (!val_dir.empty()) val = load_dataset(val_dir);

  ensure_dir(out_dir);
  const std::string ckpt_w = (fs::path(out_dir) / "checkpoint_last.pyrdw").string();
  const std::string ckpt_o = (fs::path(out_dir) / "checkpoint_last.pyro").string();
  const std::string final_w = (fs::path(out_dir) / "model.pyrdw").string();
  const std::string log_path = (fs::path(out_dir) / "log.csv").string();

  pyrd::PyramidModel model = pyrd::make_pyramid_model(backbone, scales, mode, cfg.seed);
  pyrd::TrainerState state;
  if (resume) {
    if (!fs::exists(ckpt_w) || !fs::exists(ckpt_o)) {
      throw pyrd::InputError("no checkpoint to resume from in '" + out_dir + "'");
    }
    pyrd::load_weights_into(model, ckpt_w);
    state = pyrd::load_optimizer_state(ckpt_o);
  }

  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw pyrd::IoError("cannot write '" + log_path + "'");
  if (!resume) log << "epoch,lr,train_loss,val_mae\n";

  pyrd::TrainHooks hooks;
  hooks.checkpoint_weights = ckpt_w;
  hooks.checkpoint_optimizer = ckpt_o;
  hooks.on_epoch = [&](const pyrd::EpochStats& e) {
    log << e.epoch << "," << fmt6(e.lr) << "," << fmt6(e.train_loss) << ","
        << (e.has_val ? fmt6(e.val_mae) : "") << "\n";
    log.flush();
    std::cout << "epoch " << e.epoch << " loss " << fmt6(e.train_loss);
    if (e.has_val) std::cout << " val_mae " << fmt6(e.val_mae);
    std::cout << "\n";
  };

  Manifest manifest("train", out_dir);
  manifest.inputs() = {{"config", config_path},
                       {"data", data_dir},
                       {"seed", cfg.seed},
                       {"resume", resume}};
  const pyrd::TrainResult result =
      pyrd::train(model, ds, cfg, val.empty() ? nullptr : &val, hooks, &state);

  if (!result.diverged) pyrd::save_weights(model, final_w);
  for (const std::string& p : {ckpt_w, ckpt_o, final_w, log_path}) {
    if (fs::exists(p)) manifest.add_output(p);
  }
  manifest.extra()["epochs_run"] = state.next_epoch;
  manifest.extra()["diverged"] = result.diverged;
  manifest.write();

  if (result.diverged) {
    std::cerr << "training aborted: " << result.abort_reason
              << " (last checkpoint kept)\n";
    return 3;
  }
  std::cout << "trained " << result.log.size() << " epochs, weights in " << final_w << "\n";
  return 0;
}

int cmd_eval(const std::string& weights, const std::string& data_dir,
             const std::string& out_dir, const std::string& config_file,
             const std::vector<float>& scales, bool pass_through, double density_scale,
             bool with_fps, int threads) {
  pyrd::set_num_threads(threads);
  pyrd::Dataset ds = load_dataset(data_dir);

  std::vector<pyrd::EvalRow> rows;
  pyrd::PyramidModel model;
  if (!pass_through) {
    model = load_model(weights, config_file, scales);
  }
  for (const pyrd::Sample& s : ds) {
    pyrd::EvalRow row;
    row.image = s.name;
    row.gt = static_cast<double>(s.points.points.size());
    row.pred = pass_through ? row.gt : pyrd::predict_full(model, s.image, density_scale).total();
    rows.push_back(row);
  }
  const pyrd::EvalSummary summary = pyrd::summarize(rows);

  ensure_dir(out_dir);
  Manifest manifest("eval", out_dir);
  manifest.inputs() = {{"weights", pass_through ? "(pass-through)" : weights},
                       {"data", data_dir},
                       {"pass_through", pass_through}};

  const std::string report_path = (fs::path(out_dir) / "report.csv").string();
  std::ofstream report(report_path);
  report << "image,gt,pred,abs_err\n";
  for (const pyrd::EvalRow& r : rows) {
    report << r.image << "," << fmt6(r.gt) << "," << fmt6(r.pred) << ","
           << fmt6(std::abs(r.pred - r.gt)) << "\n";
  }
  report.close();
  manifest.add_output(report_path);

  json jsum = {{"mae", summary.mae}, {"mse", summary.mse}, {"rmse", summary.rmse}};
  if (with_fps && !pass_through) {
    jsum["fps"] = pyrd::benchmark_fps(model, ds[0].image.h, ds[0].image.w, 3);
  }
  const std::string sum_path = (fs::path(out_dir) / "summary.json").string();
  std::ofstream sum(sum_path);
  sum << jsum.dump(2) << "\n";
  sum.close();
  manifest.add_output(sum_path);
  manifest.write();

  std::cout << "mae " << fmt6(summary.mae) << " mse " << fmt6(summary.mse) << " rmse "
            << fmt6(summary.rmse) << " over " << rows.size() << " images\n";
  return 0;
}

int cmd_predict(const std::string& weights, const std::string& image_path,
                const std::string& out_dir, const std::string& config_file,
                const std::vector<float>& scales, double density_scale, int threads) {
  pyrd::set_num_threads(threads);
  pyrd::PyramidModel model = load_model(weights, config_file, scales);
  const pyrd::Tensor4 image = pyrd::read_pgm(image_path);
  const std::string stem = fs::path(image_path).stem().string();

  // Pad like predict_full does, but keep the per-scale maps for export.
  const int ph = (image.h + 3) / 4 * 4;
  const int pw = (image.w + 3) / 4 * 4;
  pyrd::Tensor4 padded(1, 1, ph, pw);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) padded.at(0, 0, y, x) = image.at(0, 0, y, x);
  }
  const pyrd::PyramidOutput out = pyrd::forward_pyramid(model, padded);

  const int oh = (image.h + 3) / 4, ow = (image.w + 3) / 4;
  pyrd::DensityMap density(oh, ow, 4);
  pyrd::Tensor4 density_map(1, 1, oh, ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      density.at(y, x) = static_cast<double>(out.fused.at(0, 0, y, x)) / density_scale;
      density_map.at(0, 0, y, x) = out.fused.at(0, 0, y, x);
    }
  }

  ensure_dir(out_dir);
  Manifest manifest("predict", out_dir);
  manifest.inputs() = {{"weights", weights}, {"image", image_path}};

  const std::string csv_path = (fs::path(out_dir) / (stem + "_density.csv")).string();
  pyrd::write_density_csv(csv_path, density);
  manifest.add_output(csv_path);
  const std::string viz_path = (fs::path(out_dir) / (stem + "_density.pgm")).string();
  pyrd::write_pgm_normalized(viz_path, density_map);
  manifest.add_output(viz_path);

  for (std::size_t s = 0; s < out.attention_maps.size(); ++s) {
    pyrd::Tensor4 att(1, 1, oh, ow);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) att.at(0, 0, y, x) = out.attention_maps[s].at(0, 0, y, x);
    }
    const std::string att_path =
        (fs::path(out_dir) / (stem + "_attention_s" + std::to_string(s) + ".pgm")).string();
    pyrd::write_pgm_normalized(att_path, att);
    manifest.add_output(att_path);
  }

  manifest.extra()["count"] = density.total();
  manifest.write();
  std::cout << fmt6(density.total()) << "\n";
  return 0;
}

int cmd_inspect(const std::string& name_or_file) {
  pyrd::NetworkConfig cfg;
  if (fs::exists(name_or_file) && fs::path(name_or_file).extension() == ".json") {
    cfg = pyrd::config_from_json(read_text(name_or_file));
  } else {
    cfg = pyrd::builtin_config(name_or_file);
  }
  const auto rows = pyrd::inspect_layers(cfg);
  const pyrd::Backbone net = pyrd::build_backbone(cfg, 0);

  std::printf("%-8s %-14s %-11s %10s %5s %5s\n", "layer", "filter", "activation", "params",
              "rf", "out/");
  long long total = 0;
  for (const pyrd::LayerInfo& r : rows) {
    std::printf("%-8s %-14s %-11s %10lld %5d  1/%d\n", r.label.c_str(), r.filter.c_str(),
                r.activation.c_str(), r.params, r.rf, r.downsample);
    total += r.params;
  }
  std::printf("\nreceptive field: %d\n", pyrd::receptive_field(cfg));
  std::printf("backbone parameters: %lld\n", total);

  const int attn_in = cfg.penultimate_channels();
  const long long attn =
      pyrd::count_parameters(pyrd::build_attention_subnet(attn_in, 0));
  std::printf("attention subnet (+%d-ch input): %lld parameters\n", attn_in, attn);
  for (int s : {2, 3}) {
    std::printf("pyramid %ds adaptive: %lld parameters\n", s, total + attn + s + 1);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive-fusion image-pyramid crowd counting"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, ann_dir, data_dir, val_dir, config_path, weights;
  std::string image_path, name_or_file, config_file;
  std::string gt_mode = "fixed";
  double sigma = 15.0, beta = 0.3, density_scale = 100.0;
  int k = 5, threads = 1;
  bool resume = false, pass_through = false, with_fps = false;
  std::vector<float> scales;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("spec", spec_path, "scene spec JSON")->required();
  synth->add_option("-o,--out", out_dir, "output directory")->required();

  CLI::App* gt = app.add_subcommand("gt", "build ground-truth density maps");
  gt->add_option("annotations", ann_dir, "directory with .json annotations and .pgm images")
      ->required();
  gt->add_option("-o,--out", out_dir, "output directory")->required();
  gt->add_option("--mode", gt_mode, "fixed | adaptive")->default_val("fixed");
  gt->add_option("--sigma", sigma, "fixed-kernel std in px")->default_val(15.0);
  gt->add_option("-k", k, "adaptive: neighbours")->default_val(5);
  gt->add_option("--beta", beta, "adaptive: sigma = beta * mean kNN distance")
      ->default_val(0.3);

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("config", config_path, "train config JSON")->required();
  train->add_option("data", data_dir, "training data directory")->required();
  train->add_option("-o,--out", out_dir, "output directory")->required();
  train->add_option("--val-dir", val_dir, "validation data directory");
  train->add_flag("--resume", resume, "resume from the checkpoint in --out");
  train->add_option("--threads", threads, "intra-op worker threads")->default_val(1);

  CLI::App* eval = app.add_subcommand("eval", "evaluate counting metrics");
  eval->add_option("data", data_dir, "evaluation data directory")->required();
  eval->add_option("-o,--out", out_dir, "output directory")->required();
  eval->add_option("-w,--weights", weights, "weight file");
  eval->add_option("--config", config_file, "custom backbone config JSON");
  eval->add_option("--scales", scales, "pyramid scales override");
  eval->add_flag("--pass-through", pass_through,
                 "score ground truth against itself (no model)");
  eval->add_option("--density-scale", density_scale)->default_val(100.0);
  eval->add_flag("--fps", with_fps, "also measure throughput");
  eval->add_option("--threads", threads, "intra-op worker threads")->default_val(1);

  CLI::App* predict = app.add_subcommand("predict", "predict a density map for one image");
  predict->add_option("image", image_path, "input PGM image")->required();
  predict->add_option("-w,--weights", weights, "weight file")->required();
  predict->add_option("-o,--out", out_dir, "output directory")->required();
  predict->add_option("--config", config_file, "custom backbone config JSON");
  predict->add_option("--scales", scales, "pyramid scales override");
  predict->add_option("--density-scale", density_scale)->default_val(100.0);
  predict->add_option("--threads", threads, "intra-op worker threads")->default_val(1);

  CLI::App* inspect = app.add_subcommand("inspect", "show RF, parameters, per-layer shapes");
  inspect->add_option("config", name_or_file, "preset name or config JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(spec_path, out_dir);
    if (gt->parsed()) return cmd_gt(ann_dir, out_dir, gt_mode, sigma, k, beta);
    if (train->parsed())
      return cmd_train(config_path, data_dir, out_dir, val_dir, resume, threads);
    if (eval->parsed())
      return cmd_eval(weights, data_dir, out_dir, config_file, scales, pass_through,
                      density_scale, with_fps, threads);
    if (predict->parsed())
      return cmd_predict(weights, image_path, out_dir, config_file, scales, density_scale,
                         threads);
    if (inspect->parsed()) return cmd_inspect(name_or_file);
  } catch (const pyrd::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const pyrd::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
