#include "pyrd/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pyrd/errors.hpp"
#include "pyrd/evaluation.hpp"

namespace pyrd {

void TrainConfig::validate() const {
  if (patch_size != 4 * target_size) {
    throw ConfigError("patch_size must be 4 * target_size, got " + std::to_string(patch_size) +
                      " vs " + std::to_string(target_size));
  }
  if (patch_size % 4 != 0 || patch_size < 4) {
    throw ConfigError("patch_size must be a positive multiple of 4");
  }
  if (!(lr_initial > 0.0) || !(density_scale > 0.0) || !(lr_decay_factor > 0.0)) {
    throw ConfigError("learning rate, density scale and decay factor must be > 0");
  }
  if (momentum < 0.0 || weight_decay < 0.0 || adam_warm_epochs < 0) {
    throw ConfigError("momentum, weight_decay and adam_warm_epochs must be >= 0");
  }
  if (epochs < 0 || batch_size < 1 || lr_decay_every < 1) {
    throw ConfigError("epochs >= 0, batch_size >= 1 and lr_decay_every >= 1 required");
  }
}

double TrainConfig::lr_at(int epoch) const {
  return lr_initial * std::pow(lr_decay_factor, epoch / lr_decay_every);
}

void attach_ground_truth(Dataset& ds, const GtOptions& opt) {
  for (Sample& s : ds) {
    s.density = opt.adaptive ? generate_adaptive(s.points, opt.adaptive_opt)
                             : generate_fixed(s.points, opt.sigma);
  }
}

namespace {

Tensor4 pad_to(const Tensor4& t, int h, int w) {
  if (t.h >= h && t.w >= w) return t;
  Tensor4 out(t.n, t.c, std::max(t.h, h), std::max(t.w, w));
  for (int img = 0; img < t.n; ++img) {
    for (int ci = 0; ci < t.c; ++ci) {
      for (int y = 0; y < t.h; ++y) {
        std::memcpy(&out.data[out.index(img, ci, y, 0)], &t.data[t.index(img, ci, y, 0)],
                    static_cast<std::size_t>(t.w) * sizeof(float));
      }
    }
  }
  return out;
}

}  // namespace

Patch sample_patch(const Tensor4& image, const DensityMap& full_density, std::mt19937& rng,
                   const TrainConfig& cfg) {
  if (image.h != full_density.h || image.w != full_density.w) {
    throw InputError("image and density dims differ: " + image.dims_str());
  }
  const int P = cfg.patch_size;
  const Tensor4 img = pad_to(image, P, P);
  const int max_y = img.h - P;
  const int max_x = img.w - P;
  const int y0 = max_y > 0 ? std::uniform_int_distribution<int>(0, max_y)(rng) : 0;
  const int x0 = max_x > 0 ? std::uniform_int_distribution<int>(0, max_x)(rng) : 0;
  const bool flip = cfg.hflip && std::uniform_int_distribution<int>(0, 1)(rng) == 1;

  Patch p{Tensor4(1, 1, P, P), Tensor4(1, 1, cfg.target_size, cfg.target_size)};
  for (int y = 0; y < P; ++y) {
    for (int x = 0; x < P; ++x) {
      p.input.at(0, 0, y, flip ? P - 1 - x : x) = img.at(0, 0, y0 + y, x0 + x);
    }
  }
  // Density crop (zero where the padded image had no data), 4x4 sum-pooled.
  DensityMap crop(P, P, 1);
  for (int y = 0; y < P; ++y) {
    const int sy = y0 + y;
    if (sy >= full_density.h) continue;
    for (int x = 0; x < P; ++x) {
      const int sx = x0 + x;
      if (sx >= full_density.w) continue;
      crop.at(y, flip ? P - 1 - x : x) = full_density.at(sy, sx);
    }
  }
  const DensityMap pooled = sum_pool_4(crop);
  for (int y = 0; y < cfg.target_size; ++y) {
    for (int x = 0; x < cfg.target_size; ++x) {
      p.target.at(0, 0, y, x) = static_cast<float>(pooled.at(y, x) * cfg.density_scale);
    }
  }
  return p;
}

namespace {

void ensure_buffers(std::vector<std::vector<float>>& bufs, const std::vector<ParamRef>& params) {
  if (bufs.empty()) {
    bufs.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      bufs[i].assign(params[i].value.size(), 0.0f);
    }
    return;
  }
  if (bufs.size() != params.size()) {
    throw TrainingError("optimizer state does not match the model's parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (bufs[i].size() != params[i].value.size()) {
      throw TrainingError("optimizer state size mismatch for " + params[i].name);
    }
  }
}

void check_finite_grads(const std::vector<ParamRef>& params, long long step) {
  for (const ParamRef& p : params) {
    for (float g : p.grad) {
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient in " + p.name + " at step " +
                            std::to_string(step));
      }
    }
  }
}

}  // namespace

void SgdMomentum::step(std::vector<ParamRef>& params, double lr, double momentum,
                       double weight_decay) {
  ensure_buffers(velocity_, params);
  ++steps_;
  check_finite_grads(params, steps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamRef& p = params[i];
    std::vector<float>& vel = velocity_[i];
    for (std::size_t j = 0; j < vel.size(); ++j) {
      const double g = p.grad[j] + weight_decay * p.value[j];
      const double v = momentum * vel[j] - lr * g;
      vel[j] = static_cast<float>(v);
      p.value[j] = static_cast<float>(p.value[j] + v);
    }
  }
}

void Adam::step(std::vector<ParamRef>& params, double lr, double beta1, double beta2,
                double eps) {
  ensure_buffers(m_, params);
  ensure_buffers(v_, params);
  ++t_;
  check_finite_grads(params, t_);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamRef& p = params[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      const double m = beta1 * m_[i][j] + (1.0 - beta1) * g;
      const double v = beta2 * v_[i][j] + (1.0 - beta2) * g * g;
      m_[i][j] = static_cast<float>(m);
      v_[i][j] = static_cast<float>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p.value[j] = static_cast<float>(p.value[j] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Optimizer-state sidecar
// ---------------------------------------------------------------------------

namespace {

const char* kStateMagic = "PYRO";
constexpr std::uint32_t kStateVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const char* field) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw IoError(std::string("truncated optimizer state reading ") + field);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_bufs(std::ostream& os, const std::vector<std::vector<float>>& bufs) {
  put_u32(os, static_cast<std::uint32_t>(bufs.size()));
  for (const auto& b : bufs) {
    put_u32(os, static_cast<std::uint32_t>(b.size()));
    for (float f : b) {
      std::uint32_t v;
      std::memcpy(&v, &f, 4);
      put_u32(os, v);
    }
  }
}

std::vector<std::vector<float>> get_bufs(std::istream& is, const char* field) {
  std::vector<std::vector<float>> bufs(get_u32(is, field));
  for (auto& b : bufs) {
    b.resize(get_u32(is, field));
    for (float& f : b) {
      const std::uint32_t v = get_u32(is, field);
      std::memcpy(&f, &v, 4);
    }
  }
  return bufs;
}

}  // namespace

void save_optimizer_state(const std::string& path, const TrainerState& state) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kStateMagic, 4);
  put_u32(os, kStateVersion);
  put_u32(os, static_cast<std::uint32_t>(state.next_epoch));
  TrainerState& s = const_cast<TrainerState&>(state);
  put_u32(os, static_cast<std::uint32_t>(s.adam.timestep()));
  put_bufs(os, s.sgd.velocity());
  put_bufs(os, s.adam.moment1());
  put_bufs(os, s.adam.moment2());
  if (!os) throw IoError("failed writing '" + path + "'");
}

TrainerState load_optimizer_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open optimizer state '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kStateMagic, 4) != 0) {
    throw IoError("'" + path + "' is not a PYRO optimizer state file");
  }
  if (get_u32(is, "version") != kStateVersion) {
    throw IoError("unsupported optimizer state version in '" + path + "'");
  }
  TrainerState state;
  state.next_epoch = static_cast<int>(get_u32(is, "epoch"));
  state.adam.timestep() = get_u32(is, "timestep");
  state.sgd.velocity() = get_bufs(is, "velocity");
  state.adam.moment1() = get_bufs(is, "moment1");
  state.adam.moment2() = get_bufs(is, "moment2");
  return state;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

std::vector<float> snapshot_params(PyramidModel& model) {
  std::vector<float> flat;
  for (const ParamRef& p : parameters(model)) {
    flat.insert(flat.end(), p.value.begin(), p.value.end());
  }
  return flat;
}

void restore_params(PyramidModel& model, const std::vector<float>& flat) {
  std::size_t off = 0;
  for (ParamRef& p : parameters(model)) {
    std::copy(flat.begin() + off, flat.begin() + off + p.value.size(), p.value.begin());
    off += p.value.size();
  }
}

double validation_mae(PyramidModel& model, const Dataset& val, double density_scale) {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(val.size());
  for (const Sample& s : val) {
    const DensityMap pred = predict_full(model, s.image, density_scale);
    pairs.emplace_back(static_cast<double>(s.points.points.size()), pred.total());
  }
  return mae(pairs);
}

}  // namespace

TrainResult train(PyramidModel& model, const Dataset& train_set, const TrainConfig& cfg,
                  const Dataset* val_set, const TrainHooks& hooks, TrainerState* state) {
  cfg.validate();
  if (train_set.empty()) throw InputError("training dataset is empty");
  for (const Sample& s : train_set) {
    if (s.density.grid.empty()) {
      throw InputError("sample '" + s.name + "' has no ground-truth density attached");
    }
  }

  TrainerState local_state;
  TrainerState& st = state ? *state : local_state;
  TrainResult result;

  std::vector<ParamRef> params = parameters(model);
  std::vector<float> last_good = snapshot_params(model);
  GradTape tape;

  const std::size_t n = train_set.size();
  for (int epoch = st.next_epoch; epoch < cfg.epochs; ++epoch) {
    std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(epoch)};
    std::mt19937 rng(seq);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    const double lr = cfg.lr_at(epoch);
    const bool use_adam = epoch < cfg.adam_warm_epochs;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    bool finite = true;

    for (std::size_t begin = 0; begin < n && finite; begin += cfg.batch_size) {
      const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, n - begin);
      Tensor4 input(static_cast<int>(bsz), 1, cfg.patch_size, cfg.patch_size);
      Tensor4 target(static_cast<int>(bsz), 1, cfg.target_size, cfg.target_size);
      for (std::size_t b = 0; b < bsz; ++b) {
        const Sample& s = train_set[order[begin + b]];
        Patch p = sample_patch(s.image, s.density, rng, cfg);
        std::copy(p.input.data.begin(), p.input.data.end(),
                  input.data.begin() + b * p.input.size());
        std::copy(p.target.data.begin(), p.target.data.end(),
                  target.data.begin() + b * p.target.size());
      }

      tape.clear();
      zero_grads(model);
      PyramidOutput out = forward_pyramid(model, input, &tape);
      const double loss = mse_loss_forward(out.fused, target);
      if (!std::isfinite(loss)) {
        result.abort_reason = "non-finite training loss in epoch " + std::to_string(epoch);
        finite = false;
        break;
      }
      loss_sum += loss * static_cast<double>(bsz);
      loss_count += bsz;

      out.fused_node->grad = mse_loss_backward(out.fused, target);
      tape.backward();
      try {
        if (use_adam) {
          st.adam.step(params, lr);
        } else {
          st.sgd.step(params, lr, cfg.momentum, cfg.weight_decay);
        }
      } catch (const TrainingError& e) {
        result.abort_reason = e.what();
        finite = false;
      }
    }

    if (!finite) {
      restore_params(model, last_good);
      result.diverged = true;
      break;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, loss_count));
    if (val_set && !val_set->empty()) {
      stats.val_mae = validation_mae(model, *val_set, cfg.density_scale);
      stats.has_val = true;
    }
    result.log.push_back(stats);
    last_good = snapshot_params(model);
    st.next_epoch = epoch + 1;

    if (!hooks.checkpoint_weights.empty()) save_weights(model, hooks.checkpoint_weights);
    if (!hooks.checkpoint_optimizer.empty()) save_optimizer_state(hooks.checkpoint_optimizer, st);
    if (hooks.on_epoch) hooks.on_epoch(stats);
  }
  tape.clear();
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

void SyntheticSceneSpec::validate() const {
  if (h < 8 || w < 8) throw ConfigError("synthetic scene dims must be >= 8");
  if (count_min < 0 || count_max < count_min) {
    throw ConfigError("synthetic count range invalid");
  }
  const double smallest = std::min(size0, size0 + size_gradient * (h - 1));
  if (smallest < 2.0) {
    throw ConfigError("synthetic blob diameter must stay >= 2 px over the whole image");
  }
  if (blob_intensity <= 0.0 || bg_level < 0.0 || noise_std < 0.0) {
    throw ConfigError("synthetic intensities must be sensible (blob > 0, bg/noise >= 0)");
  }
}

Dataset generate_synthetic_dataset(const SyntheticSceneSpec& spec, int n_images) {
  spec.validate();
  if (n_images < 1) throw InputError("n_images must be >= 1");
  Dataset ds;
  ds.reserve(n_images);

  for (int i = 0; i < n_images; ++i) {
    std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(i)};
    std::mt19937 rng(seq);
    std::uniform_int_distribution<int> count_dist(spec.count_min, spec.count_max);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, spec.noise_std);

    Sample s;
    s.name = "scene_" + std::to_string(i);
    s.points.h = spec.h;
    s.points.w = spec.w;

    std::vector<double> canvas(static_cast<std::size_t>(spec.h) * spec.w, spec.bg_level);
    const int count = count_dist(rng);
    for (int b = 0; b < count; ++b) {
      double cy = ud(rng) * (spec.h - 1);
      double cx = ud(rng) * (spec.w - 1);
      // Fit the disc inside the frame; the radius depends on y, so settle it
      // in two passes.
      for (int pass = 0; pass < 2; ++pass) {
        const double r = (spec.size0 + spec.size_gradient * cy) / 2.0;
        cy = std::clamp(cy, r + 1.0, spec.h - 2.0 - r);
        cx = std::clamp(cx, r + 1.0, spec.w - 2.0 - r);
      }
      const double r = (spec.size0 + spec.size_gradient * cy) / 2.0;
      const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
      const int y1 = std::min(spec.h - 1, static_cast<int>(std::ceil(cy + r + 1)));
      const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
      const int x1 = std::min(spec.w - 1, static_cast<int>(std::ceil(cx + r + 1)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double d = std::hypot(x - cx, y - cy);
          const double cover = std::clamp(r + 0.5 - d, 0.0, 1.0);  // soft 1 px edge
          if (cover > 0.0) {
            canvas[static_cast<std::size_t>(y) * spec.w + x] += spec.blob_intensity * cover;
          }
        }
      }
      s.points.points.push_back({static_cast<float>(cx), static_cast<float>(cy)});
    }

    s.image = Tensor4(1, 1, spec.h, spec.w);
    for (std::size_t px = 0; px < canvas.size(); ++px) {
      double v = canvas[px];
      if (spec.noise_std > 0.0) v += noise(rng);
      const int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      s.image.data[px] = static_cast<float>(q) / 255.0f;  // match the 8-bit PGM on disk
    }
    ds.push_back(std::move(s));
  }
  return ds;
}

}  // namespace pyrd
