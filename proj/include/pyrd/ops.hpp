#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "pyrd/tensor.hpp"

namespace pyrd {

enum class Activation { None, LeakyRelu, Relu };

// Parameters of one stride-1 convolution. Padding is always (kh-1)/2 x (kw-1)/2
// ("same" output size), the only mode the networks use; kernels must be odd.
struct ConvParams {
  Tensor4 weights;          // (out_ch, in_ch, kh, kw)
  std::vector<float> bias;  // out_ch

  int out_ch() const { return weights.n; }
  int in_ch() const { return weights.c; }
  int pad_h() const { return (weights.h - 1) / 2; }
  int pad_w() const { return (weights.w - 1) / 2; }
};

// Intra-op worker count for the convolution GEMMs. Output rows are
// partitioned across threads, so results are bit-identical for any value.
void set_num_threads(int n);
int num_threads();

Tensor4 conv2d_forward(const Tensor4& x, const ConvParams& p);

struct ConvGrads {
  Tensor4 x;             // empty when grad_x was not requested
  Tensor4 w;
  std::vector<float> b;
};
ConvGrads conv2d_backward(const Tensor4& grad_out, const Tensor4& x, const ConvParams& p,
                          bool need_grad_x = true);

struct PoolResult {
  Tensor4 y;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};
PoolResult maxpool2x2_forward(const Tensor4& x);
Tensor4 maxpool2x2_backward(const Tensor4& grad_out, const std::vector<std::uint32_t>& argmax,
                            const std::array<int, 4>& input_dims);

Tensor4 leaky_relu_forward(const Tensor4& x, float slope = 0.1f);
Tensor4 leaky_relu_backward(const Tensor4& grad_out, const Tensor4& x, float slope = 0.1f);
Tensor4 relu_forward(const Tensor4& x);
Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& x);

// Half-pixel-center bilinear interpolation: src coord = (i + 0.5) * scale - 0.5,
// clamped to the valid range. The upsample op requires target >= source; the
// free resize (used to build the image pyramid) allows shrinking and has no
// backward, since no gradient flows through input resizing.
Tensor4 bilinear_upsample_forward(const Tensor4& x, int target_h, int target_w);
Tensor4 bilinear_upsample_backward(const Tensor4& grad_out, int src_h, int src_w);
Tensor4 bilinear_resize(const Tensor4& x, int target_h, int target_w);

// Stacks S single-channel maps of identical dims into one (n, S, h, w) tensor.
Tensor4 stack_maps(const std::vector<Tensor4>& maps);

// Per-pixel softmax over the channel (scale) dimension, max-subtracted.
Tensor4 softmax_across_scales_forward(const Tensor4& stack);
Tensor4 softmax_across_scales_backward(const Tensor4& grad_out, const Tensor4& y);

Tensor4 elementwise_mul_forward(const Tensor4& a, const Tensor4& b);

Tensor4 sum_channels_forward(const Tensor4& x);  // (n,c,h,w) -> (n,1,h,w)
Tensor4 sum_channels_backward(const Tensor4& grad_out, int channels);

double mse_loss_forward(const Tensor4& pred, const Tensor4& target);
Tensor4 mse_loss_backward(const Tensor4& pred, const Tensor4& target, double upstream = 1.0);

// Records backward closures during a taped forward pass and replays them in
// exact reverse order. Node storage is a deque so references stay stable.
// A tape is single-threaded.
class GradTape {
 public:
  struct Node {
    Tensor4 value;
    Tensor4 grad;
    bool needs_grad = true;
  };

  Node& add(Tensor4 value, bool needs_grad = true);
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  void backward();
  void clear();
  std::size_t num_steps() const { return steps_.size(); }

 private:
  std::deque<Node> nodes_;
  std::vector<std::function<void()>> steps_;
};

}  // namespace pyrd
