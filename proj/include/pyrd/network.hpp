#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pyrd/ops.hpp"
#include "pyrd/tensor.hpp"

namespace pyrd {

struct LayerSpec {
  enum class Kind { Conv, Pool };
  Kind kind = Kind::Conv;
  // Conv fields (ignored for pools):
  int out_ch = 0;
  int in_ch = 0;
  int kh = 0;
  int kw = 0;
  Activation activation = Activation::LeakyRelu;

  static LayerSpec conv(int out_ch, int in_ch, int k, Activation act = Activation::LeakyRelu) {
    return {Kind::Conv, out_ch, in_ch, k, k, act};
  }
  static LayerSpec pool() { return {Kind::Pool, 0, 0, 0, 0, Activation::None}; }
};

// Declarative backbone description: the filter table rows as data.
struct NetworkConfig {
  std::string name;
  std::vector<LayerSpec> layers;

  // Checks channel chaining and basic conv sanity (any conv net).
  void validate() const;
  // Additionally checks the backbone contract: exactly two pools and a final
  // 1-channel ReLU prediction layer.
  void validate_backbone() const;

  int num_convs() const;
  // Output channels of the conv feeding the final prediction layer.
  int penultimate_channels() const;
};

NetworkConfig builtin_config(const std::string& name);
std::vector<std::string> builtin_config_names();

// Parses {"name": ..., "layers": [{"type":"conv","out":16,"in":1,"k":5,
// "activation":"leaky_relu"}, {"type":"pool"}, ...]}.
NetworkConfig config_from_json(const std::string& json_text);

// One conv layer with its parameters, gradients and activation.
struct ConvLayer {
  std::string name;
  ConvParams params;
  Activation activation = Activation::None;
  Tensor4 grad_w;
  std::vector<float> grad_b;
};

struct Backbone {
  NetworkConfig config;
  std::vector<ConvLayer> convs;  // in config order, pools interleaved per config
};

// Two-layer attention head: 8 x in_ch x 3x3 (leaky ReLU) then 1 x 8 x 1x1.
struct AttentionSubnet {
  ConvLayer l1;
  ConvLayer l2;
};

enum class FusionMode { Adaptive, Fixed, NoSoftmax, Sum };

FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(FusionMode m);

// Backbone + attention sub-net + fusion conv, shared across all pyramid
// scales. The attention sub-net is absent in fixed mode and the fusion conv
// is absent in sum mode.
struct PyramidModel {
  Backbone backbone;
  std::optional<AttentionSubnet> attention;
  std::optional<ConvLayer> fusion;
  std::vector<float> scales;  // in (0, 1], first == 1.0
  FusionMode mode = FusionMode::Adaptive;

  int num_scales() const { return static_cast<int>(scales.size()); }
};

Backbone build_backbone(const NetworkConfig& config, std::uint64_t seed);
AttentionSubnet build_attention_subnet(int in_ch, std::uint64_t seed);
PyramidModel make_pyramid_model(const NetworkConfig& config, std::vector<float> scales,
                                FusionMode mode, std::uint64_t seed);

long long count_parameters(const Backbone& net);
long long count_parameters(const AttentionSubnet& net);
long long count_parameters(const PyramidModel& model);

// rf += (k-1)*jump per conv; jump doubles at each 2x2 pool.
int receptive_field(const NetworkConfig& config);

struct LayerInfo {
  std::string label;       // "conv3", "pool", ...
  std::string filter;      // "32x16x5x5" or "2x2"
  std::string activation;  // "leaky_relu", "relu", "-", ...
  long long params = 0;
  int rf = 0;          // receptive field after this layer
  int downsample = 1;  // cumulative spatial stride after this layer
};
std::vector<LayerInfo> inspect_layers(const NetworkConfig& config);

// Mutable view of one parameter tensor, shared by the optimizers and the
// weight-file writer. Enumeration order is fixed: backbone convs in config
// order (weights then bias), attention l1/l2, fusion conv.
struct ParamRef {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::span<float> value;
  std::span<float> grad;
};
std::vector<ParamRef> parameters(PyramidModel& model);
void zero_grads(PyramidModel& model);

struct PyramidOutput {
  Tensor4 fused;                         // (n, 1, h/4, w/4)
  std::vector<Tensor4> scale_densities;  // per scale, upsampled to (h/4, w/4)
  std::vector<Tensor4> attention_maps;   // fusion weights per scale; empty in fixed mode
  GradTape::Node* fused_node = nullptr;  // set when a tape was recorded
};

// Runs the image pyramid: per scale, resize -> backbone -> density +
// attention -> upsample to (h/4, w/4), then fuse according to the model's
// fusion mode. Image must be single-channel with dims that are multiples
// of 4 (predict_full pads arbitrary images first). Pass a tape to record
// backward steps for training.
PyramidOutput forward_pyramid(PyramidModel& model, const Tensor4& image,
                              GradTape* tape = nullptr);

// Little-endian binary weight file: magic "PYRD", version u32, config-name
// (u32 length + UTF-8), scale count u32, fusion mode u8, then per parameter
// tensor (rank u32, dims u32 x rank, f32 payload) in enumeration order.
void save_weights(const PyramidModel& model, const std::string& path);

// Rebuilds the model from the header (the config name must be a builtin) and
// loads the tensors. Scales are restored by count: 1 -> {1.0},
// 2 -> {1.0, 0.7}, 3 -> {1.0, 0.7, 0.5}; pass scales explicitly to override
// or when the count exceeds three.
PyramidModel load_weights(const std::string& path,
                          const std::vector<float>* scales_override = nullptr);

// Loads tensors into an already-built model (needed for custom configs);
// header name, scale count, fusion mode and every shape must match.
void load_weights_into(PyramidModel& model, const std::string& path);

struct WeightFileInfo {
  std::string config_name;
  int num_scales = 0;
  FusionMode mode = FusionMode::Adaptive;
};
WeightFileInfo read_weight_file_info(const std::string& path);

std::vector<float> default_scales(int s);

}  // namespace pyrd
