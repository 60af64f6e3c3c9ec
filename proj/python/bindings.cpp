// Python bindings for the pyrd core: model building, inference, density
// ground truth, synthetic data, training and metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pyrd/density.hpp"
#include "pyrd/errors.hpp"
#include "pyrd/evaluation.hpp"
#include "pyrd/image_io.hpp"
#include "pyrd/network.hpp"
#include "pyrd/ops.hpp"
#include "pyrd/training.hpp"

namespace py = pybind11;
using namespace pyrd;

namespace {

Tensor4 tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() == 2) {
    Tensor4 t(1, 1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), t.data.begin());
    return t;
  }
  if (a.ndim() == 4) {
    Tensor4 t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
              static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3)));
    std::copy(a.data(), a.data() + a.size(), t.data.begin());
    return t;
  }
  throw InputError("expected a 2-d (h, w) or 4-d (n, c, h, w) float array");
}

py::array_t<float> array_from_tensor(const Tensor4& t) {
  py::array_t<float> a({t.n, t.c, t.h, t.w});
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

py::array_t<double> array_from_density(const DensityMap& d) {
  py::array_t<double> a({d.h, d.w});
  std::copy(d.grid.begin(), d.grid.end(), a.mutable_data());
  return a;
}

DensityMap density_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw InputError("density grids are 2-d arrays");
  DensityMap d(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), d.grid.begin());
  return d;
}

PointAnnotations points_from_array(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& pts, int h, int w) {
  if (pts.ndim() != 2 || (pts.shape(0) > 0 && pts.shape(1) != 2)) {
    throw InputError("points must be an (n, 2) array of [x, y]");
  }
  PointAnnotations ann;
  ann.h = h;
  ann.w = w;
  for (py::ssize_t i = 0; i < pts.shape(0); ++i) {
    ann.points.push_back({pts.at(i, 0), pts.at(i, 1)});
  }
  return ann;
}

NetworkConfig config_from_name_or_json(const std::string& s) {
  if (!s.empty() && s.front() == '{') return config_from_json(s);
  return builtin_config(s);
}

TrainConfig train_config_from_dict(const py::dict& d) {
  TrainConfig cfg;
  for (auto item : d) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "patch_size") cfg.patch_size = py::cast<int>(item.second);
    else if (key == "target_size") cfg.target_size = py::cast<int>(item.second);
    else if (key == "density_scale") cfg.density_scale = py::cast<double>(item.second);
    else if (key == "lr_initial") cfg.lr_initial = py::cast<double>(item.second);
    else if (key == "momentum") cfg.momentum = py::cast<double>(item.second);
    else if (key == "lr_decay_factor") cfg.lr_decay_factor = py::cast<double>(item.second);
    else if (key == "lr_decay_every") cfg.lr_decay_every = py::cast<int>(item.second);
    else if (key == "weight_decay") cfg.weight_decay = py::cast<double>(item.second);
    else if (key == "adam_warm_epochs") cfg.adam_warm_epochs = py::cast<int>(item.second);
    else if (key == "epochs") cfg.epochs = py::cast<int>(item.second);
    else if (key == "batch_size") cfg.batch_size = py::cast<int>(item.second);
    else if (key == "seed") cfg.seed = py::cast<std::uint64_t>(item.second);
    else if (key == "hflip") cfg.hflip = py::cast<bool>(item.second);
    else throw InputError("unknown train config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

class PyModel {
 public:
  PyModel(const std::string& config, std::vector<float> scales, const std::string& mode,
          std::uint64_t seed)
      : model_(make_pyramid_model(config_from_name_or_json(config), std::move(scales),
                                  fusion_mode_from_string(mode), seed)) {}
  explicit PyModel(PyramidModel m) : model_(std::move(m)) {}

  long long count_parameters() const { return pyrd::count_parameters(model_); }
  long long backbone_parameters() const { return pyrd::count_parameters(model_.backbone); }
  int receptive_field() const { return pyrd::receptive_field(model_.backbone.config); }
  std::vector<float> scales() const { return model_.scales; }
  std::string fusion_mode() const { return to_string(model_.mode); }

  py::array_t<double> predict(
      const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
      double density_scale) {
    const Tensor4 img = tensor_from_array(image);
    return array_from_density(predict_full(model_, img, density_scale));
  }

  py::dict forward(const py::array_t<float, py::array::c_style | py::array::forcecast>& image) {
    const Tensor4 img = tensor_from_array(image);
    const PyramidOutput out = forward_pyramid(model_, img);
    py::dict r;
    r["fused"] = array_from_tensor(out.fused);
    py::list dens, attn;
    for (const Tensor4& d : out.scale_densities) dens.append(array_from_tensor(d));
    for (const Tensor4& a : out.attention_maps) attn.append(array_from_tensor(a));
    r["scale_densities"] = dens;
    r["attention"] = attn;
    return r;
  }

  py::list fit(const py::list& samples, const py::dict& config, const py::dict& gt) {
    const TrainConfig cfg = train_config_from_dict(config);
    GtOptions gt_opt;
    if (gt.contains("mode") && py::cast<std::string>(gt["mode"]) == "adaptive") {
      gt_opt.adaptive = true;
      if (gt.contains("k")) gt_opt.adaptive_opt.k = py::cast<int>(gt["k"]);
      if (gt.contains("beta")) gt_opt.adaptive_opt.beta = py::cast<double>(gt["beta"]);
    } else if (gt.contains("sigma")) {
      gt_opt.sigma = py::cast<double>(gt["sigma"]);
    }

    Dataset ds;
    for (auto item : samples) {
      const py::tuple t = py::cast<py::tuple>(item);
      Sample s;
      s.image = tensor_from_array(py::cast<py::array_t<float>>(t[0]));
      s.points = points_from_array(py::cast<py::array_t<float>>(t[1]), s.image.h, s.image.w);
      s.name = "sample_" + std::to_string(ds.size());
      ds.push_back(std::move(s));
    }
    attach_ground_truth(ds, gt_opt);

    const TrainResult result = train(model_, ds, cfg);
    if (result.diverged) throw TrainingError("training diverged: " + result.abort_reason);
    py::list log;
    for (const EpochStats& e : result.log) {
      py::dict row;
      row["epoch"] = e.epoch;
      row["lr"] = e.lr;
      row["train_loss"] = e.train_loss;
      log.append(row);
    }
    return log;
  }

  void save(const std::string& path) const { save_weights(model_, path); }

  static PyModel load(const std::string& path) { return PyModel(load_weights(path)); }

 private:
  PyramidModel model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adaptive-fusion image-pyramid crowd counting core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, std::vector<float>, const std::string&,
                    std::uint64_t>(),
           py::arg("config"), py::arg("scales") = std::vector<float>{1.0f},
           py::arg("fusion_mode") = "adaptive", py::arg("seed") = 0)
      .def("count_parameters", &PyModel::count_parameters)
      .def("backbone_parameters", &PyModel::backbone_parameters)
      .def("receptive_field", &PyModel::receptive_field)
      .def("scales", &PyModel::scales)
      .def("fusion_mode", &PyModel::fusion_mode)
      .def("predict", &PyModel::predict, py::arg("image"), py::arg("density_scale") = 100.0,
           "Full-image density prediction at 1/4 resolution; sums to the count.")
      .def("forward", &PyModel::forward, py::arg("image"),
           "Raw pyramid outputs: fused map, per-scale densities, attention maps.")
      .def("fit", &PyModel::fit, py::arg("samples"), py::arg("config"),
           py::arg("gt") = py::dict(),
           "Trains in place on [(image, points), ...]; returns the epoch log.")
      .def("save", &PyModel::save, py::arg("path"))
      .def_static("load", &PyModel::load, py::arg("path"));

  m.def("builtin_configs", &builtin_config_names);
  m.def(
      "receptive_field",
      [](const std::string& config) {
        return receptive_field(config_from_name_or_json(config));
      },
      py::arg("config"));
  m.def(
      "backbone_parameters",
      [](const std::string& config) {
        return count_parameters(build_backbone(config_from_name_or_json(config), 0));
      },
      py::arg("config"));

  m.def(
      "conv2d",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& w,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
        ConvParams p;
        p.weights = tensor_from_array(w);
        if (b.ndim() != 1) throw InputError("bias must be 1-d");
        p.bias.assign(b.data(), b.data() + b.size());
        return array_from_tensor(conv2d_forward(tensor_from_array(x), p));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias"),
      "Stride-1 same-padding convolution, (n,c,h,w) x (o,c,kh,kw).");
  m.def("leaky_relu", [](const py::array_t<float>& x, float slope) {
    return array_from_tensor(leaky_relu_forward(tensor_from_array(x), slope));
  }, py::arg("x"), py::arg("slope") = 0.1f);
  m.def("relu", [](const py::array_t<float>& x) {
    return array_from_tensor(relu_forward(tensor_from_array(x)));
  }, py::arg("x"));
  m.def("maxpool2x2", [](const py::array_t<float>& x) {
    return array_from_tensor(maxpool2x2_forward(tensor_from_array(x)).y);
  }, py::arg("x"));
  m.def("bilinear_resize", [](const py::array_t<float>& x, int h, int w) {
    return array_from_tensor(bilinear_resize(tensor_from_array(x), h, w));
  }, py::arg("x"), py::arg("target_h"), py::arg("target_w"));
  m.def("softmax_across_scales", [](const py::array_t<float>& stack) {
    return array_from_tensor(softmax_across_scales_forward(tensor_from_array(stack)));
  }, py::arg("stack"), "Per-pixel softmax over the channel (scale) dimension.");
  m.def("mse_loss", [](const py::array_t<float>& pred, const py::array_t<float>& target) {
    return mse_loss_forward(tensor_from_array(pred), tensor_from_array(target));
  }, py::arg("pred"), py::arg("target"));

  m.def(
      "generate_fixed",
      [](const py::array_t<float>& points, int h, int w, double sigma) {
        return array_from_density(generate_fixed(points_from_array(points, h, w), sigma));
      },
      py::arg("points"), py::arg("h"), py::arg("w"), py::arg("sigma"),
      "Per-point unit-mass Gaussian density map, window-renormalized.");
  m.def(
      "generate_adaptive",
      [](const py::array_t<float>& points, int h, int w, int k, double beta) {
        AdaptiveKernelOptions opt;
        opt.k = k;
        opt.beta = beta;
        return array_from_density(generate_adaptive(points_from_array(points, h, w), opt));
      },
      py::arg("points"), py::arg("h"), py::arg("w"), py::arg("k") = 5,
      py::arg("beta") = 0.3);
  m.def("sum_pool_4", [](const py::array_t<double>& grid) {
    return array_from_density(sum_pool_4(density_from_array(grid)));
  }, py::arg("grid"));
  m.def(
      "knn_distances",
      [](const py::array_t<float>& points, int k) {
        PointAnnotations ann = points_from_array(points, 1 << 20, 1 << 20);
        return knn_distances(ann.points, k);
      },
      py::arg("points"), py::arg("k") = 5);

  m.def(
      "synthetic_dataset",
      [](int n_images, int h, int w, int count_min, int count_max, double size_base,
         double size_gradient, std::uint64_t seed) {
        SyntheticSceneSpec spec;
        spec.h = h;
        spec.w = w;
        spec.count_min = count_min;
        spec.count_max = count_max;
        spec.size0 = size_base;
        spec.size_gradient = size_gradient;
        spec.seed = seed;
        py::list out;
        for (const Sample& s : generate_synthetic_dataset(spec, n_images)) {
          py::array_t<float> pts({static_cast<py::ssize_t>(s.points.points.size()),
                                  static_cast<py::ssize_t>(2)});
          for (std::size_t i = 0; i < s.points.points.size(); ++i) {
            pts.mutable_at(i, 0) = s.points.points[i][0];
            pts.mutable_at(i, 1) = s.points.points[i][1];
          }
          out.append(py::make_tuple(array_from_tensor(s.image), pts));
        }
        return out;
      },
      py::arg("n_images"), py::arg("h") = 192, py::arg("w") = 192, py::arg("count_min") = 10,
      py::arg("count_max") = 40, py::arg("size_base") = 6.0, py::arg("size_gradient") = 0.0,
      py::arg("seed") = 0,
      "Soft-disc scenes with diameter growing linearly in y; returns [(image, points)].");

  m.def("mae", &mae, py::arg("pairs"));
  m.def("mse", &mse, py::arg("pairs"));
  m.def("rmse", &rmse, py::arg("pairs"));

  m.def("set_num_threads", &set_num_threads, py::arg("n"));
  m.def("read_pgm", [](const std::string& path) { return array_from_tensor(read_pgm(path)); });
  m.def("write_pgm", [](const std::string& path, const py::array_t<float>& img) {
    write_pgm(path, tensor_from_array(img));
  });
}
