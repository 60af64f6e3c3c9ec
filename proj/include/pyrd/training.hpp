#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pyrd/density.hpp"
#include "pyrd/network.hpp"
#include "pyrd/tensor.hpp"

namespace pyrd {

struct TrainConfig {
  int patch_size = 128;
  int target_size = 32;
  double density_scale = 100.0;
  double lr_initial = 0.001;
  double momentum = 0.9;
  double lr_decay_factor = 0.5;
  int lr_decay_every = 100;  // epochs
  double weight_decay = 1e-4;
  int adam_warm_epochs = 0;
  int epochs = 0;  // total epoch count (resume runs up to this)
  int batch_size = 1;
  std::uint64_t seed = 0;
  bool hflip = false;

  void validate() const;  // patch_size == 4 * target_size, rates > 0
  double lr_at(int epoch) const;
};

// One training/evaluation image with its annotations and (optionally)
// precomputed full-resolution ground-truth density.
struct Sample {
  std::string name;
  Tensor4 image;  // (1,1,h,w), values in [0,1]
  PointAnnotations points;
  DensityMap density;
};
using Dataset = std::vector<Sample>;

struct GtOptions {
  bool adaptive = false;
  double sigma = 15.0;  // fixed mode
  AdaptiveKernelOptions adaptive_opt;
};
void attach_ground_truth(Dataset& ds, const GtOptions& opt);

// Uniform random patch crop; images smaller than the patch are zero-padded
// right/bottom first. The target is the sum-pooled density crop scaled by
// density_scale.
struct Patch {
  Tensor4 input;   // (1,1,patch,patch)
  Tensor4 target;  // (1,1,patch/4,patch/4)
};
Patch sample_patch(const Tensor4& image, const DensityMap& full_density, std::mt19937& rng,
                   const TrainConfig& cfg);

// v <- momentum*v - lr*(g + weight_decay*w); w <- w + v
class SgdMomentum {
 public:
  void step(std::vector<ParamRef>& params, double lr, double momentum, double weight_decay);
  std::vector<std::vector<float>>& velocity() { return velocity_; }

 private:
  std::vector<std::vector<float>> velocity_;
  long long steps_ = 0;
};

// Bias-corrected Adam.
class Adam {
 public:
  void step(std::vector<ParamRef>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);
  std::vector<std::vector<float>>& moment1() { return m_; }
  std::vector<std::vector<float>>& moment2() { return v_; }
  long long& timestep() { return t_; }

 private:
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long long t_ = 0;
};

// Optimizer buffers plus the epoch counter, persisted next to checkpoints so
// training can resume with continued epoch numbering.
struct TrainerState {
  int next_epoch = 0;
  SgdMomentum sgd;
  Adam adam;
};
void save_optimizer_state(const std::string& path, const TrainerState& state);
TrainerState load_optimizer_state(const std::string& path);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  bool has_val = false;
};

struct TrainResult {
  std::vector<EpochStats> log;
  bool diverged = false;
  std::string abort_reason;
};

struct TrainHooks {
  std::function<void(const EpochStats&)> on_epoch;
  std::string checkpoint_weights;    // written after every finite-loss epoch
  std::string checkpoint_optimizer;  // sidecar, written alongside
};

// Runs Adam for the first adam_warm_epochs epochs, then SGD with momentum,
// with the configured step decay. Batch gradients are averaged. On a
// non-finite loss or gradient the run stops and the model is rolled back to
// the last completed epoch.
TrainResult train(PyramidModel& model, const Dataset& train_set, const TrainConfig& cfg,
                  const Dataset* val_set = nullptr, const TrainHooks& hooks = {},
                  TrainerState* state = nullptr);

// Grayscale scenes of soft-edged bright discs on a noisy background, disc
// diameter growing linearly with y: size(y) = size0 + size_gradient * y.
// Annotations are the disc centres, so ground-truth counts are exact.
struct SyntheticSceneSpec {
  int h = 192;
  int w = 192;
  int count_min = 10;
  int count_max = 40;
  double size0 = 6.0;           // disc diameter at y = 0, px
  double size_gradient = 0.0;   // extra diameter per pixel of y
  double blob_intensity = 0.5;  // added brightness per disc
  double bg_level = 0.1;
  double noise_std = 0.02;
  std::uint64_t seed = 0;

  void validate() const;  // diameters >= 2 px everywhere
};

Dataset generate_synthetic_dataset(const SyntheticSceneSpec& spec, int n_images);

}  // namespace pyrd
