#include "pyrd/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <thread>

#include "pyrd/errors.hpp"

namespace pyrd {

namespace {

std::atomic<int> g_num_threads{1};

// Runs fn(begin, end) over contiguous chunks of [0, count). Each item is
// processed entirely by one worker, so results do not depend on the
// thread count.
void parallel_for(std::int64_t count, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  const int threads = std::min<std::int64_t>(g_num_threads.load(), count);
  if (threads <= 1) {
    fn(0, count);
    return;
  }
  const std::int64_t chunk = (count + threads - 1) / threads;
  std::vector<std::thread> workers;
  workers.reserve(threads - 1);
  for (int t = 1; t < threads; ++t) {
    const std::int64_t b = t * chunk;
    const std::int64_t e = std::min<std::int64_t>(count, b + chunk);
    if (b >= e) break;
    workers.emplace_back(fn, b, e);
  }
  fn(0, std::min<std::int64_t>(count, chunk));
  for (auto& th : workers) th.join();
}

void check_conv_args(const Tensor4& x, const ConvParams& p) {
  if (p.weights.h % 2 == 0 || p.weights.w % 2 == 0) {
    throw ConfigError("conv kernels must be odd for same-padding, got " + p.weights.dims_str());
  }
  if (x.c != p.in_ch()) {
    std::ostringstream os;
    os << "conv channel mismatch: input has " << x.c << " channels, kernel expects "
       << p.in_ch();
    throw ConfigError(os.str());
  }
  if (static_cast<int>(p.bias.size()) != p.out_ch()) {
    throw ConfigError("conv bias size does not match output channels");
  }
  if (x.h < 1 || x.w < 1) {
    throw ConfigError("conv input has zero-sized spatial dims");
  }
}

// Fills a (K x L) column matrix for one image and one strip of output rows,
// K = in_ch*kh*kw, L = rows*w. Out-of-image taps are zero.
void im2col_strip(const Tensor4& x, int img, int y_begin, int rows, int kh, int kw, int ph,
                  int pw, float* col) {
  const int w = x.w;
  const std::int64_t L = static_cast<std::int64_t>(rows) * w;
  std::int64_t k = 0;
  for (int ci = 0; ci < x.c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++k) {
        float* dst = col + k * L;
        for (int r = 0; r < rows; ++r) {
          const int sy = y_begin + r + ky - ph;
          float* drow = dst + static_cast<std::int64_t>(r) * w;
          if (sy < 0 || sy >= x.h) {
            std::memset(drow, 0, sizeof(float) * w);
            continue;
          }
          const float* src = &x.data[x.index(img, ci, sy, 0)];
          const int shift = kx - pw;  // source x = output x + shift
          const int x_lo = std::max(0, -shift);
          const int x_hi = std::min(w, w - shift);
          if (x_lo > 0) std::memset(drow, 0, sizeof(float) * x_lo);
          if (x_hi < w) std::memset(drow + x_hi, 0, sizeof(float) * (w - x_hi));
          if (x_hi > x_lo) {
            std::memcpy(drow + x_lo, src + x_lo + shift, sizeof(float) * (x_hi - x_lo));
          }
        }
      }
    }
  }
}

int strip_rows_for(std::int64_t K, int w, int h) {
  // Keep the column buffer around 4 MB.
  const std::int64_t budget = (4u << 20) / sizeof(float);
  std::int64_t rows = budget / std::max<std::int64_t>(1, K * w);
  return static_cast<int>(std::clamp<std::int64_t>(rows, 1, h));
}

}  // namespace

void set_num_threads(int n) { g_num_threads.store(std::max(1, n)); }
int num_threads() { return g_num_threads.load(); }

Tensor4 conv2d_forward(const Tensor4& x, const ConvParams& p) {
  check_conv_args(x, p);
  const int kh = p.weights.h, kw = p.weights.w;
  const int ph = p.pad_h(), pw = p.pad_w();
  const int oc = p.out_ch();
  const std::int64_t K = static_cast<std::int64_t>(x.c) * kh * kw;

  Tensor4 y(x.n, oc, x.h, x.w);
  const int strip = strip_rows_for(K, x.w, x.h);
  std::vector<float> col(static_cast<std::size_t>(K) * strip * x.w);

  for (int img = 0; img < x.n; ++img) {
    for (int y0 = 0; y0 < x.h; y0 += strip) {
      const int rows = std::min(strip, x.h - y0);
      const std::int64_t L = static_cast<std::int64_t>(rows) * x.w;
      im2col_strip(x, img, y0, rows, kh, kw, ph, pw, col.data());

      parallel_for(oc, [&](std::int64_t o_begin, std::int64_t o_end) {
        std::vector<double> acc(L);
        for (std::int64_t o = o_begin; o < o_end; ++o) {
          std::fill(acc.begin(), acc.end(), static_cast<double>(p.bias[o]));
          const float* wrow = &p.weights.data[o * K];
          for (std::int64_t k = 0; k < K; ++k) {
            const double a = wrow[k];
            if (a == 0.0) continue;
            const float* crow = col.data() + k * L;
            for (std::int64_t l = 0; l < L; ++l) acc[l] += a * crow[l];
          }
          float* out = &y.data[y.index(img, static_cast<int>(o), y0, 0)];
          for (std::int64_t l = 0; l < L; ++l) out[l] = static_cast<float>(acc[l]);
        }
      });
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor4& grad_out, const Tensor4& x, const ConvParams& p,
                          bool need_grad_x) {
  check_conv_args(x, p);
  const int oc = p.out_ch();
  if (grad_out.n != x.n || grad_out.c != oc || grad_out.h != x.h || grad_out.w != x.w) {
    throw ConfigError("conv backward: grad_out dims " + grad_out.dims_str() +
                      " do not match forward output for input " + x.dims_str());
  }
  const int kh = p.weights.h, kw = p.weights.w;
  const int ph = p.pad_h(), pw = p.pad_w();
  const std::int64_t K = static_cast<std::int64_t>(x.c) * kh * kw;

  ConvGrads g;
  g.w = zeros_like(p.weights);
  g.b.assign(oc, 0.0f);
  std::vector<double> dw(static_cast<std::size_t>(oc) * K, 0.0);
  std::vector<double> db(oc, 0.0);
  std::vector<double> dx;
  if (need_grad_x) dx.assign(x.size(), 0.0);

  const int strip = strip_rows_for(K, x.w, x.h);
  std::vector<float> col(static_cast<std::size_t>(K) * strip * x.w);
  std::vector<double> colg(static_cast<std::size_t>(K) * strip * x.w);

  for (int img = 0; img < x.n; ++img) {
    for (int y0 = 0; y0 < x.h; y0 += strip) {
      const int rows = std::min(strip, x.h - y0);
      const std::int64_t L = static_cast<std::int64_t>(rows) * x.w;
      im2col_strip(x, img, y0, rows, kh, kw, ph, pw, col.data());

      // dW[o,k] += <grad_out row o, col row k>; db[o] += sum(grad_out row o)
      parallel_for(oc, [&](std::int64_t o_begin, std::int64_t o_end) {
        for (std::int64_t o = o_begin; o < o_end; ++o) {
          const float* grow = &grad_out.data[grad_out.index(img, static_cast<int>(o), y0, 0)];
          double bsum = 0.0;
          for (std::int64_t l = 0; l < L; ++l) bsum += grow[l];
          db[o] += bsum;
          double* dwrow = dw.data() + o * K;
          for (std::int64_t k = 0; k < K; ++k) {
            const float* crow = col.data() + k * L;
            double acc = 0.0;
            for (std::int64_t l = 0; l < L; ++l) acc += static_cast<double>(grow[l]) * crow[l];
            dwrow[k] += acc;
          }
        }
      });

      if (!need_grad_x) continue;

      // col_grad = W^T * grad_out, then scatter back (col2im).
      parallel_for(K, [&](std::int64_t k_begin, std::int64_t k_end) {
        for (std::int64_t k = k_begin; k < k_end; ++k) {
          double* crow = colg.data() + k * L;
          std::fill(crow, crow + L, 0.0);
          for (int o = 0; o < oc; ++o) {
            const double a = p.weights.data[o * K + k];
            if (a == 0.0) continue;
            const float* grow = &grad_out.data[grad_out.index(img, o, y0, 0)];
            for (std::int64_t l = 0; l < L; ++l) crow[l] += a * grow[l];
          }
        }
      });

      std::int64_t k = 0;
      for (int ci = 0; ci < x.c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx, ++k) {
            const double* crow = colg.data() + k * L;
            const int shift = kx - pw;
            for (int r = 0; r < rows; ++r) {
              const int sy = y0 + r + ky - ph;
              if (sy < 0 || sy >= x.h) continue;
              double* dxrow = dx.data() + x.index(img, ci, sy, 0);
              const double* srow = crow + static_cast<std::int64_t>(r) * x.w;
              const int x_lo = std::max(0, -shift);
              const int x_hi = std::min(x.w, x.w - shift);
              for (int l = x_lo; l < x_hi; ++l) dxrow[l + shift] += srow[l];
            }
          }
        }
      }
    }
  }

  for (int o = 0; o < oc; ++o) g.b[o] = static_cast<float>(db[o]);
  for (std::size_t i = 0; i < g.w.size(); ++i) g.w.data[i] = static_cast<float>(dw[i]);
  if (need_grad_x) {
    g.x = zeros_like(x);
    for (std::size_t i = 0; i < dx.size(); ++i) g.x.data[i] = static_cast<float>(dx[i]);
  }
  return g;
}

PoolResult maxpool2x2_forward(const Tensor4& x) {
  if (x.h < 2 || x.w < 2) {
    throw ConfigError("maxpool2x2 needs spatial dims >= 2, got " + x.dims_str());
  }
  const int oh = x.h / 2, ow = x.w / 2;
  PoolResult r{Tensor4(x.n, x.c, oh, ow), {}};
  r.argmax.resize(r.y.size());
  std::size_t oi = 0;
  for (int img = 0; img < x.n; ++img) {
    for (int ci = 0; ci < x.c; ++ci) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          // First (row-major) maximal element of the window wins ties.
          std::size_t best = x.index(img, ci, 2 * oy, 2 * ox);
          float best_v = x.data[best];
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = x.index(img, ci, 2 * oy + dy, 2 * ox + dx);
              if (x.data[idx] > best_v) {
                best_v = x.data[idx];
                best = idx;
              }
            }
          }
          r.y.data[oi] = best_v;
          r.argmax[oi] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return r;
}

Tensor4 maxpool2x2_backward(const Tensor4& grad_out, const std::vector<std::uint32_t>& argmax,
                            const std::array<int, 4>& input_dims) {
  if (grad_out.size() != argmax.size()) {
    throw ConfigError("maxpool backward: grad/argmax size mismatch");
  }
  Tensor4 gx(input_dims[0], input_dims[1], input_dims[2], input_dims[3]);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    gx.data[argmax[i]] += grad_out.data[i];
  }
  return gx;
}

Tensor4 leaky_relu_forward(const Tensor4& x, float slope) {
  Tensor4 y = x;
  for (float& v : y.data) v = v >= 0.0f ? v : slope * v;
  return y;
}

Tensor4 leaky_relu_backward(const Tensor4& grad_out, const Tensor4& x, float slope) {
  Tensor4 gx = grad_out;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    if (x.data[i] < 0.0f) gx.data[i] *= slope;
  }
  return gx;
}

Tensor4 relu_forward(const Tensor4& x) {
  Tensor4 y = x;
  for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& x) {
  Tensor4 gx = grad_out;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    if (x.data[i] <= 0.0f) gx.data[i] = 0.0f;  // subgradient 0 at exactly 0
  }
  return gx;
}

namespace {

struct Lerp {
  int i0, i1;
  float f;  // weight of i1
};

std::vector<Lerp> lerp_axis(int src, int target) {
  std::vector<Lerp> m(target);
  const double scale = static_cast<double>(src) / target;
  for (int i = 0; i < target; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(s);
    m[i].i0 = i0;
    m[i].i1 = std::min(i0 + 1, src - 1);
    m[i].f = static_cast<float>(s - i0);
  }
  return m;
}

}  // namespace

Tensor4 bilinear_resize(const Tensor4& x, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) {
    throw ConfigError("bilinear_resize target dims must be >= 1");
  }
  if (target_h == x.h && target_w == x.w) return x;
  const auto ym = lerp_axis(x.h, target_h);
  const auto xm = lerp_axis(x.w, target_w);
  Tensor4 y(x.n, x.c, target_h, target_w);
  for (int img = 0; img < x.n; ++img) {
    for (int ci = 0; ci < x.c; ++ci) {
      for (int oy = 0; oy < target_h; ++oy) {
        const Lerp& ly = ym[oy];
        const float* r0 = &x.data[x.index(img, ci, ly.i0, 0)];
        const float* r1 = &x.data[x.index(img, ci, ly.i1, 0)];
        float* out = &y.data[y.index(img, ci, oy, 0)];
        for (int ox = 0; ox < target_w; ++ox) {
          const Lerp& lx = xm[ox];
          const float top = r0[lx.i0] + lx.f * (r0[lx.i1] - r0[lx.i0]);
          const float bot = r1[lx.i0] + lx.f * (r1[lx.i1] - r1[lx.i0]);
          out[ox] = top + ly.f * (bot - top);
        }
      }
    }
  }
  return y;
}

Tensor4 bilinear_upsample_forward(const Tensor4& x, int target_h, int target_w) {
  if (target_h < x.h || target_w < x.w) {
    throw ConfigError("bilinear_upsample target " + std::to_string(target_h) + "x" +
                      std::to_string(target_w) + " smaller than source " + x.dims_str());
  }
  return bilinear_resize(x, target_h, target_w);
}

Tensor4 bilinear_upsample_backward(const Tensor4& grad_out, int src_h, int src_w) {
  const auto ym = lerp_axis(src_h, grad_out.h);
  const auto xm = lerp_axis(src_w, grad_out.w);
  Tensor4 gx(grad_out.n, grad_out.c, src_h, src_w);
  std::vector<double> acc(static_cast<std::size_t>(src_h) * src_w);
  for (int img = 0; img < grad_out.n; ++img) {
    for (int ci = 0; ci < grad_out.c; ++ci) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int oy = 0; oy < grad_out.h; ++oy) {
        const Lerp& ly = ym[oy];
        const float* grow = &grad_out.data[grad_out.index(img, ci, oy, 0)];
        for (int ox = 0; ox < grad_out.w; ++ox) {
          const Lerp& lx = xm[ox];
          const double g = grow[ox];
          acc[static_cast<std::size_t>(ly.i0) * src_w + lx.i0] += (1.0 - ly.f) * (1.0 - lx.f) * g;
          acc[static_cast<std::size_t>(ly.i0) * src_w + lx.i1] += (1.0 - ly.f) * lx.f * g;
          acc[static_cast<std::size_t>(ly.i1) * src_w + lx.i0] += ly.f * (1.0 - lx.f) * g;
          acc[static_cast<std::size_t>(ly.i1) * src_w + lx.i1] += ly.f * lx.f * g;
        }
      }
      float* out = &gx.data[gx.index(img, ci, 0, 0)];
      for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
    }
  }
  return gx;
}

Tensor4 stack_maps(const std::vector<Tensor4>& maps) {
  if (maps.empty()) throw ConfigError("stack_maps: empty map list");
  for (const Tensor4& m : maps) {
    if (m.c != 1) throw ConfigError("stack_maps expects single-channel maps");
    if (!m.same_dims(maps.front())) {
      throw ConfigError("stack_maps dim mismatch: " + m.dims_str() + " vs " +
                        maps.front().dims_str());
    }
  }
  const Tensor4& f = maps.front();
  Tensor4 y(f.n, static_cast<int>(maps.size()), f.h, f.w);
  const std::size_t plane = static_cast<std::size_t>(f.h) * f.w;
  for (int img = 0; img < f.n; ++img) {
    for (std::size_t s = 0; s < maps.size(); ++s) {
      std::memcpy(&y.data[y.index(img, static_cast<int>(s), 0, 0)],
                  &maps[s].data[maps[s].index(img, 0, 0, 0)], plane * sizeof(float));
    }
  }
  return y;
}

Tensor4 softmax_across_scales_forward(const Tensor4& stack) {
  if (stack.c < 2) {
    throw ConfigError("softmax_across_scales needs >= 2 scales, got " +
                      std::to_string(stack.c));
  }
  Tensor4 y = zeros_like(stack);
  const std::size_t plane = static_cast<std::size_t>(stack.h) * stack.w;
  for (int img = 0; img < stack.n; ++img) {
    const float* in = &stack.data[stack.index(img, 0, 0, 0)];
    float* out = &y.data[y.index(img, 0, 0, 0)];
    for (std::size_t px = 0; px < plane; ++px) {
      float mx = in[px];
      for (int s = 1; s < stack.c; ++s) mx = std::max(mx, in[s * plane + px]);
      double denom = 0.0;
      for (int s = 0; s < stack.c; ++s) {
        const double e = std::exp(static_cast<double>(in[s * plane + px]) - mx);
        out[s * plane + px] = static_cast<float>(e);
        denom += e;
      }
      for (int s = 0; s < stack.c; ++s) {
        out[s * plane + px] = static_cast<float>(out[s * plane + px] / denom);
      }
    }
  }
  return y;
}

Tensor4 softmax_across_scales_backward(const Tensor4& grad_out, const Tensor4& y) {
  if (!grad_out.same_dims(y)) throw ConfigError("softmax backward dim mismatch");
  Tensor4 gx = zeros_like(y);
  const std::size_t plane = static_cast<std::size_t>(y.h) * y.w;
  for (int img = 0; img < y.n; ++img) {
    const float* gv = &grad_out.data[grad_out.index(img, 0, 0, 0)];
    const float* yv = &y.data[y.index(img, 0, 0, 0)];
    float* out = &gx.data[gx.index(img, 0, 0, 0)];
    for (std::size_t px = 0; px < plane; ++px) {
      double dot = 0.0;
      for (int s = 0; s < y.c; ++s) {
        dot += static_cast<double>(gv[s * plane + px]) * yv[s * plane + px];
      }
      for (int s = 0; s < y.c; ++s) {
        out[s * plane + px] =
            static_cast<float>(yv[s * plane + px] * (gv[s * plane + px] - dot));
      }
    }
  }
  return gx;
}

Tensor4 elementwise_mul_forward(const Tensor4& a, const Tensor4& b) {
  if (!a.same_dims(b)) {
    throw ConfigError("elementwise_mul dim mismatch: " + a.dims_str() + " vs " + b.dims_str());
  }
  Tensor4 y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= b.data[i];
  return y;
}

Tensor4 sum_channels_forward(const Tensor4& x) {
  Tensor4 y(x.n, 1, x.h, x.w);
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  for (int img = 0; img < x.n; ++img) {
    const float* in = &x.data[x.index(img, 0, 0, 0)];
    float* out = &y.data[y.index(img, 0, 0, 0)];
    for (std::size_t px = 0; px < plane; ++px) {
      double acc = 0.0;
      for (int s = 0; s < x.c; ++s) acc += in[s * plane + px];
      out[px] = static_cast<float>(acc);
    }
  }
  return y;
}

Tensor4 sum_channels_backward(const Tensor4& grad_out, int channels) {
  if (grad_out.c != 1) throw ConfigError("sum_channels backward expects 1-channel grad");
  Tensor4 gx(grad_out.n, channels, grad_out.h, grad_out.w);
  const std::size_t plane = static_cast<std::size_t>(grad_out.h) * grad_out.w;
  for (int img = 0; img < grad_out.n; ++img) {
    const float* g = &grad_out.data[grad_out.index(img, 0, 0, 0)];
    float* out = &gx.data[gx.index(img, 0, 0, 0)];
    for (int s = 0; s < channels; ++s) {
      std::memcpy(out + s * plane, g, plane * sizeof(float));
    }
  }
  return gx;
}

double mse_loss_forward(const Tensor4& pred, const Tensor4& target) {
  if (!pred.same_dims(target)) {
    throw ConfigError("mse_loss dim mismatch: " + pred.dims_str() + " vs " + target.dims_str());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

Tensor4 mse_loss_backward(const Tensor4& pred, const Tensor4& target, double upstream) {
  if (!pred.same_dims(target)) throw ConfigError("mse_loss backward dim mismatch");
  Tensor4 g = zeros_like(pred);
  const double scale = 2.0 * upstream / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.data[i] = static_cast<float>(scale * (static_cast<double>(pred.data[i]) - target.data[i]));
  }
  return g;
}

GradTape::Node& GradTape::add(Tensor4 value, bool needs_grad) {
  Node node;
  node.needs_grad = needs_grad;
  if (needs_grad) node.grad = zeros_like(value);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return nodes_.back();
}

void GradTape::backward() {
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void GradTape::clear() {
  steps_.clear();
  nodes_.clear();
}

}  // namespace pyrd
