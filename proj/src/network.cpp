#include "pyrd/network.hpp"

#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "pyrd/errors.hpp"

namespace pyrd {

namespace {

const char* kWeightMagic = "PYRD";
constexpr std::uint32_t kWeightVersion = 1;

std::string layer_label(const NetworkConfig& cfg, std::size_t idx) {
  int conv_no = 0;
  for (std::size_t i = 0; i <= idx; ++i) {
    if (cfg.layers[i].kind == LayerSpec::Kind::Conv) ++conv_no;
  }
  if (cfg.layers[idx].kind == LayerSpec::Kind::Pool) return "pool";
  return "conv" + std::to_string(conv_no);
}

void add_inplace(Tensor4& dst, const Tensor4& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

Tensor4 take_channel(const Tensor4& stack, int s) {
  Tensor4 out(stack.n, 1, stack.h, stack.w);
  const std::size_t plane = static_cast<std::size_t>(stack.h) * stack.w;
  for (int img = 0; img < stack.n; ++img) {
    std::memcpy(&out.data[out.index(img, 0, 0, 0)], &stack.data[stack.index(img, s, 0, 0)],
                plane * sizeof(float));
  }
  return out;
}

ConvLayer init_conv_layer(const std::string& name, int out_ch, int in_ch, int kh, int kw,
                          Activation act, std::mt19937& rng) {
  ConvLayer layer;
  layer.name = name;
  layer.activation = act;
  layer.params.weights = Tensor4(out_ch, in_ch, kh, kw);
  layer.params.bias.assign(out_ch, 0.0f);
  const double fan_in = static_cast<double>(in_ch) * kh * kw;
  const double fan_out = static_cast<double>(out_ch) * kh * kw;
  const float bound = static_cast<float>(std::sqrt(6.0 / (fan_in + fan_out)));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : layer.params.weights.data) v = dist(rng);
  layer.grad_w = zeros_like(layer.params.weights);
  layer.grad_b.assign(out_ch, 0.0f);
  return layer;
}

}  // namespace

void NetworkConfig::validate() const {
  if (layers.empty()) throw ConfigError("config '" + name + "': no layers");
  if (layers.front().kind != LayerSpec::Kind::Conv) {
    throw ConfigError("config '" + name + "': first layer must be a conv");
  }
  int prev_out = -1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerSpec::Kind::Pool) continue;
    const std::string label = layer_label(*this, i);
    if (l.out_ch < 1 || l.in_ch < 1) {
      throw ConfigError("config '" + name + "', " + label + ": channels must be >= 1");
    }
    if (l.kh < 1 || l.kw < 1 || l.kh % 2 == 0 || l.kw % 2 == 0) {
      throw ConfigError("config '" + name + "', " + label + ": kernel must be odd and >= 1");
    }
    if (prev_out >= 0 && l.in_ch != prev_out) {
      std::ostringstream os;
      os << "config '" << name << "', " << label << ": in_ch " << l.in_ch
         << " does not match previous out_ch " << prev_out;
      throw ConfigError(os.str());
    }
    prev_out = l.out_ch;
  }
}

void NetworkConfig::validate_backbone() const {
  validate();
  int pools = 0;
  for (const LayerSpec& l : layers) {
    if (l.kind == LayerSpec::Kind::Pool) ++pools;
  }
  if (pools != 2) {
    throw ConfigError("config '" + name + "': backbone needs exactly two pool layers, has " +
                      std::to_string(pools));
  }
  const LayerSpec& last = layers.back();
  if (last.kind != LayerSpec::Kind::Conv || last.out_ch != 1 ||
      last.activation != Activation::Relu) {
    throw ConfigError("config '" + name +
                      "': last layer must be a 1-channel conv with relu activation");
  }
}

int NetworkConfig::num_convs() const {
  int n = 0;
  for (const LayerSpec& l : layers) {
    if (l.kind == LayerSpec::Kind::Conv) ++n;
  }
  return n;
}

int NetworkConfig::penultimate_channels() const {
  int prev = -1, before_prev = -1;
  for (const LayerSpec& l : layers) {
    if (l.kind != LayerSpec::Kind::Conv) continue;
    before_prev = prev;
    prev = l.out_ch;
  }
  if (before_prev < 0) {
    throw ConfigError("config '" + name + "': needs at least two convs");
  }
  return before_prev;
}

NetworkConfig builtin_config(const std::string& name) {
  using L = LayerSpec;
  const Activation relu = Activation::Relu;
  if (name == "FCN-7c") {
    return {name,
            {L::conv(16, 1, 5), L::conv(16, 16, 5), L::pool(), L::conv(32, 16, 5),
             L::conv(32, 32, 5), L::pool(), L::conv(64, 32, 5), L::conv(32, 64, 5),
             L::conv(1, 32, 5, relu)}};
  }
  if (name == "FCN-5c") {
    return {name,
            {L::conv(16, 1, 5), L::pool(), L::conv(32, 16, 5), L::pool(), L::conv(64, 32, 3),
             L::conv(32, 64, 3), L::conv(1, 32, 3, relu)}};
  }
  if (name == "FCN-7c-40") {
    return {name,
            {L::conv(32, 1, 3), L::conv(32, 32, 3), L::pool(), L::conv(64, 32, 3),
             L::conv(64, 64, 3), L::pool(), L::conv(96, 64, 3), L::conv(48, 96, 3),
             L::conv(1, 48, 3, relu)}};
  }
  if (name == "FCN-5c-64") {
    return {name,
            {L::conv(16, 1, 5), L::pool(), L::conv(32, 16, 5), L::pool(), L::conv(64, 32, 5),
             L::conv(32, 64, 5), L::conv(1, 32, 5, relu)}};
  }
  if (name == "FCN-5c-78") {
    return {name,
            {L::conv(16, 1, 7), L::pool(), L::conv(32, 16, 7), L::pool(), L::conv(64, 32, 7),
             L::conv(32, 64, 5), L::conv(1, 32, 5, relu)}};
  }
  if (name == "FCN-14c-76") {
    return {name,
            {L::conv(24, 1, 3), L::conv(24, 24, 3), L::conv(24, 24, 3), L::conv(24, 24, 3),
             L::pool(), L::conv(32, 24, 3), L::conv(32, 32, 3), L::conv(32, 32, 3),
             L::conv(32, 32, 3), L::pool(), L::conv(64, 32, 3), L::conv(64, 64, 3),
             L::conv(32, 64, 3), L::conv(32, 32, 3), L::conv(32, 32, 3),
             L::conv(1, 32, 3, relu)}};
  }
  std::string names;
  for (const std::string& n : builtin_config_names()) {
    if (!names.empty()) names += ", ";
    names += n;
  }
  throw ConfigError("unknown config '" + name + "' (presets: " + names + ")");
}

std::vector<std::string> builtin_config_names() {
  return {"FCN-7c", "FCN-5c", "FCN-7c-40", "FCN-5c-64", "FCN-5c-78", "FCN-14c-76"};
}

NetworkConfig config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad config JSON: ") + e.what());
  }
  NetworkConfig cfg;
  try {
    cfg.name = j.at("name").get<std::string>();
    for (const auto& jl : j.at("layers")) {
      const std::string type = jl.at("type").get<std::string>();
      if (type == "pool") {
        cfg.layers.push_back(LayerSpec::pool());
        continue;
      }
      if (type != "conv") throw InputError("layer type must be 'conv' or 'pool', got " + type);
      LayerSpec l;
      l.kind = LayerSpec::Kind::Conv;
      l.out_ch = jl.at("out").get<int>();
      l.in_ch = jl.at("in").get<int>();
      l.kh = l.kw = jl.at("k").get<int>();
      const std::string act = jl.value("activation", "leaky_relu");
      if (act == "leaky_relu") l.activation = Activation::LeakyRelu;
      else if (act == "relu") l.activation = Activation::Relu;
      else if (act == "none") l.activation = Activation::None;
      else throw InputError("unknown activation '" + act + "'");
      cfg.layers.push_back(l);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad config JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "adaptive") return FusionMode::Adaptive;
  if (s == "fixed") return FusionMode::Fixed;
  if (s == "no_softmax") return FusionMode::NoSoftmax;
  if (s == "sum") return FusionMode::Sum;
  throw ConfigError("unknown fusion mode '" + s + "' (adaptive, fixed, no_softmax, sum)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Adaptive: return "adaptive";
    case FusionMode::Fixed: return "fixed";
    case FusionMode::NoSoftmax: return "no_softmax";
    case FusionMode::Sum: return "sum";
  }
  return "?";
}

Backbone build_backbone(const NetworkConfig& config, std::uint64_t seed) {
  config.validate_backbone();
  Backbone net;
  net.config = config;
  std::mt19937 rng(static_cast<std::uint32_t>(seed) ^
                   static_cast<std::uint32_t>(seed >> 32));
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    if (l.kind != LayerSpec::Kind::Conv) continue;
    net.convs.push_back(init_conv_layer("backbone." + layer_label(config, i), l.out_ch, l.in_ch,
                                        l.kh, l.kw, l.activation, rng));
  }
  return net;
}

AttentionSubnet build_attention_subnet(int in_ch, std::uint64_t seed) {
  if (in_ch < 1) throw ConfigError("attention subnet in_ch must be >= 1");
  std::mt19937 rng(static_cast<std::uint32_t>(seed) ^
                   static_cast<std::uint32_t>(seed >> 32));
  AttentionSubnet net;
  net.l1 = init_conv_layer("attention.l1", 8, in_ch, 3, 3, Activation::LeakyRelu, rng);
  net.l2 = init_conv_layer("attention.l2", 1, 8, 1, 1, Activation::None, rng);
  return net;
}

PyramidModel make_pyramid_model(const NetworkConfig& config, std::vector<float> scales,
                                FusionMode mode, std::uint64_t seed) {
  if (scales.empty()) throw ConfigError("empty scale list");
  if (scales.front() != 1.0f) {
    throw ConfigError("first pyramid scale must be 1.0");
  }
  for (float s : scales) {
    if (!(s > 0.0f && s <= 1.0f)) {
      throw ConfigError("pyramid scales must lie in (0, 1], got " + std::to_string(s));
    }
  }
  std::mt19937 master(static_cast<std::uint32_t>(seed) ^
                      static_cast<std::uint32_t>(seed >> 32));
  const std::uint64_t backbone_seed = master();
  const std::uint64_t attn_seed = master();

  PyramidModel model;
  model.backbone = build_backbone(config, backbone_seed);
  model.scales = std::move(scales);
  model.mode = mode;
  if (mode != FusionMode::Fixed) {
    model.attention = build_attention_subnet(config.penultimate_channels(), attn_seed);
  }
  if (mode != FusionMode::Sum) {
    const int s = model.num_scales();
    ConvLayer fusion;
    fusion.name = "fusion";
    fusion.activation = Activation::None;
    fusion.params.weights = Tensor4(1, s, 1, 1, 1.0f / static_cast<float>(s));
    fusion.params.bias.assign(1, 0.0f);
    fusion.grad_w = zeros_like(fusion.params.weights);
    fusion.grad_b.assign(1, 0.0f);
    model.fusion = std::move(fusion);
  }
  return model;
}

namespace {

long long conv_param_count(const ConvLayer& l) {
  return static_cast<long long>(l.params.weights.size()) +
         static_cast<long long>(l.params.bias.size());
}

}  // namespace

long long count_parameters(const Backbone& net) {
  long long total = 0;
  for (const ConvLayer& l : net.convs) total += conv_param_count(l);
  return total;
}

long long count_parameters(const AttentionSubnet& net) {
  return conv_param_count(net.l1) + conv_param_count(net.l2);
}

long long count_parameters(const PyramidModel& model) {
  long long total = count_parameters(model.backbone);
  if (model.attention) total += count_parameters(*model.attention);
  if (model.fusion) total += conv_param_count(*model.fusion);
  return total;
}

int receptive_field(const NetworkConfig& config) {
  config.validate();
  int rf = 1;
  int jump = 1;
  for (const LayerSpec& l : config.layers) {
    if (l.kind == LayerSpec::Kind::Conv) {
      rf += (l.kh - 1) * jump;
    } else {
      rf += jump;  // 2x2 pool covers one extra input step
      jump *= 2;
    }
  }
  return rf;
}

std::vector<LayerInfo> inspect_layers(const NetworkConfig& config) {
  config.validate();
  std::vector<LayerInfo> rows;
  int rf = 1, jump = 1, down = 1;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    LayerInfo info;
    info.label = layer_label(config, i);
    if (l.kind == LayerSpec::Kind::Conv) {
      rf += (l.kh - 1) * jump;
      std::ostringstream os;
      os << l.out_ch << "x" << l.in_ch << "x" << l.kh << "x" << l.kw;
      info.filter = os.str();
      info.params = static_cast<long long>(l.out_ch) * l.in_ch * l.kh * l.kw + l.out_ch;
      switch (l.activation) {
        case Activation::LeakyRelu: info.activation = "leaky_relu"; break;
        case Activation::Relu: info.activation = "relu"; break;
        case Activation::None: info.activation = "-"; break;
      }
    } else {
      rf += jump;
      jump *= 2;
      down *= 2;
      info.filter = "2x2";
      info.activation = "-";
    }
    info.rf = rf;
    info.downsample = down;
    rows.push_back(info);
  }
  return rows;
}

namespace {

void push_conv_params(std::vector<ParamRef>& out, ConvLayer& l) {
  Tensor4& w = l.params.weights;
  out.push_back({l.name + ".w",
                 {static_cast<std::uint32_t>(w.n), static_cast<std::uint32_t>(w.c),
                  static_cast<std::uint32_t>(w.h), static_cast<std::uint32_t>(w.w)},
                 std::span<float>(w.data),
                 std::span<float>(l.grad_w.data)});
  out.push_back({l.name + ".b",
                 {static_cast<std::uint32_t>(l.params.bias.size())},
                 std::span<float>(l.params.bias),
                 std::span<float>(l.grad_b)});
}

}  // namespace

std::vector<ParamRef> parameters(PyramidModel& model) {
  std::vector<ParamRef> out;
  for (ConvLayer& l : model.backbone.convs) push_conv_params(out, l);
  if (model.attention) {
    push_conv_params(out, model.attention->l1);
    push_conv_params(out, model.attention->l2);
  }
  if (model.fusion) push_conv_params(out, *model.fusion);
  return out;
}

void zero_grads(PyramidModel& model) {
  for (ParamRef& p : parameters(model)) {
    std::fill(p.grad.begin(), p.grad.end(), 0.0f);
  }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace {

// Runs ops either plainly or recording backward closures on a tape. Taped
// intermediates live on the tape; untaped ones in a local store.
class Runner {
 public:
  explicit Runner(GradTape* tape) : tape_(tape) {}

  struct Flow {
    GradTape::Node* node = nullptr;
    Tensor4* plain = nullptr;
    const Tensor4& value() const { return node ? node->value : *plain; }
  };

  Flow wrap(Tensor4 t, bool needs_grad) {
    if (tape_) return {&tape_->add(std::move(t), needs_grad), nullptr};
    store_.push_back(std::move(t));
    return {nullptr, &store_.back()};
  }

  Flow conv(const Flow& x, ConvLayer& layer) {
    if (x.value().c != layer.params.in_ch()) {
      throw ConfigError(layer.name + ": input has " + std::to_string(x.value().c) +
                        " channels, expected " + std::to_string(layer.params.in_ch()));
    }
    Flow y = wrap(conv2d_forward(x.value(), layer.params), true);
    if (tape_) {
      GradTape::Node* xn = x.node;
      GradTape::Node* yn = y.node;
      ConvLayer* lp = &layer;
      tape_->record([xn, yn, lp] {
        ConvGrads g = conv2d_backward(yn->grad, xn->value, lp->params, xn->needs_grad);
        add_inplace(lp->grad_w, g.w);
        for (std::size_t i = 0; i < lp->grad_b.size(); ++i) lp->grad_b[i] += g.b[i];
        if (xn->needs_grad) add_inplace(xn->grad, g.x);
      });
    }
    return activate(y, layer.activation);
  }

  Flow activate(const Flow& x, Activation act) {
    if (act == Activation::None) return x;
    Tensor4 t = act == Activation::Relu ? relu_forward(x.value())
                                        : leaky_relu_forward(x.value());
    Flow y = wrap(std::move(t), true);
    if (tape_) {
      GradTape::Node* xn = x.node;
      GradTape::Node* yn = y.node;
      tape_->record([xn, yn, act] {
        Tensor4 g = act == Activation::Relu ? relu_backward(yn->grad, xn->value)
                                            : leaky_relu_backward(yn->grad, xn->value);
        add_inplace(xn->grad, g);
      });
    }
    return y;
  }

  Flow pool(const Flow& x) {
    PoolResult r = maxpool2x2_forward(x.value());
    const std::array<int, 4> dims = x.value().dims();
    Flow y = wrap(std::move(r.y), true);
    if (tape_) {
      GradTape::Node* xn = x.node;
      GradTape::Node* yn = y.node;
      tape_->record([xn, yn, dims, argmax = std::move(r.argmax)] {
        add_inplace(xn->grad, maxpool2x2_backward(yn->grad, argmax, dims));
      });
    }
    return y;
  }

  Flow upsample(const Flow& x, int th, int tw) {
    const int sh = x.value().h, sw = x.value().w;
    if (th == sh && tw == sw) return x;
    Flow y = wrap(bilinear_upsample_forward(x.value(), th, tw), true);
    if (tape_) {
      GradTape::Node* xn = x.node;
      GradTape::Node* yn = y.node;
      tape_->record([xn, yn, sh, sw] {
        add_inplace(xn->grad, bilinear_upsample_backward(yn->grad, sh, sw));
      });
    }
    return y;
  }

  Flow stack(const std::vector<Flow>& maps) {
    std::vector<Tensor4> values;
    values.reserve(maps.size());
    for (const Flow& m : maps) values.push_back(m.value());
    Flow y = wrap(stack_maps(values), true);
    if (tape_) {
      std::vector<GradTape::Node*> inputs;
      for (const Flow& m : maps) inputs.push_back(m.node);
      GradTape::Node* yn = y.node;
      tape_->record([inputs, yn] {
        for (std::size_t s = 0; s < inputs.size(); ++s) {
          add_inplace(inputs[s]->grad, take_channel(yn->grad, static_cast<int>(s)));
        }
      });
    }
    return y;
  }

  Flow softmax(const Flow& x) {
    Flow y = wrap(softmax_across_scales_forward(x.value()), true);
    if (tape_) {
      GradTape::Node* xn = x.node;
      GradTape::Node* yn = y.node;
      tape_->record([xn, yn] {
        add_inplace(xn->grad, softmax_across_scales_backward(yn->grad, yn->value));
      });
    }
    return y;
  }

  Flow mul(const Flow& a, const Flow& b) {
    Flow y = wrap(elementwise_mul_forward(a.value(), b.value()), true);
    if (tape_) {
      GradTape::Node* an = a.node;
      GradTape::Node* bn = b.node;
      GradTape::Node* yn = y.node;
      tape_->record([an, bn, yn] {
        add_inplace(an->grad, elementwise_mul_forward(yn->grad, bn->value));
        add_inplace(bn->grad, elementwise_mul_forward(yn->grad, an->value));
      });
    }
    return y;
  }

  Flow sum_channels(const Flow& x) {
    const int c = x.value().c;
    Flow y = wrap(sum_channels_forward(x.value()), true);
    if (tape_) {
      GradTape::Node* xn = x.node;
      GradTape::Node* yn = y.node;
      tape_->record([xn, yn, c] {
        add_inplace(xn->grad, sum_channels_backward(yn->grad, c));
      });
    }
    return y;
  }

 private:
  GradTape* tape_;
  std::deque<Tensor4> store_;
};

}  // namespace

PyramidOutput forward_pyramid(PyramidModel& model, const Tensor4& image, GradTape* tape) {
  if (model.scales.empty()) throw ConfigError("empty scale list");
  if (image.c != 1) {
    throw ConfigError("pyramid input must be single-channel, got " + image.dims_str());
  }
  if (image.h % 4 != 0 || image.w % 4 != 0) {
    throw InputError("pyramid input dims must be multiples of 4, got " + image.dims_str());
  }
  if (model.mode != FusionMode::Fixed && !model.attention) {
    throw ConfigError("model is missing its attention sub-net");
  }
  if (model.mode != FusionMode::Sum) {
    if (!model.fusion) throw ConfigError("model is missing its fusion conv");
    if (model.fusion->params.in_ch() != model.num_scales()) {
      throw ConfigError("fusion conv expects " + std::to_string(model.fusion->params.in_ch()) +
                        " scales, model has " + std::to_string(model.num_scales()));
    }
  }

  const int out_h = image.h / 4;
  const int out_w = image.w / 4;
  const int S = model.num_scales();
  Runner run(tape);

  // Softmax of a single map is identically 1, so with one scale the adaptive
  // and sum modes skip the attention branch entirely (its gradient is zero).
  const bool use_attention =
      model.mode != FusionMode::Fixed && (S >= 2 || model.mode == FusionMode::NoSoftmax);

  std::vector<Runner::Flow> densities;
  std::vector<Runner::Flow> attentions;
  for (int si = 0; si < S; ++si) {
    const float s = model.scales[si];
    Tensor4 scaled = s == 1.0f
                         ? image
                         : bilinear_resize(image, static_cast<int>(std::lround(s * image.h)),
                                           static_cast<int>(std::lround(s * image.w)));
    Runner::Flow cur = run.wrap(std::move(scaled), /*needs_grad=*/false);
    Runner::Flow penult;

    int conv_idx = 0;
    const int n_convs = static_cast<int>(model.backbone.convs.size());
    for (const LayerSpec& l : model.backbone.config.layers) {
      if (l.kind == LayerSpec::Kind::Pool) {
        cur = run.pool(cur);
        continue;
      }
      if (conv_idx == n_convs - 1) penult = cur;
      cur = run.conv(cur, model.backbone.convs[conv_idx]);
      ++conv_idx;
    }
    densities.push_back(run.upsample(cur, out_h, out_w));

    if (use_attention) {
      Runner::Flow a = run.conv(penult, model.attention->l1);
      a = run.conv(a, model.attention->l2);
      attentions.push_back(run.upsample(a, out_h, out_w));
    }
  }

  Runner::Flow dens_stack = S == 1 ? densities[0] : run.stack(densities);
  Runner::Flow weights;  // per-scale fusion weights, when they exist
  bool have_weights = false;

  Runner::Flow fused_in = dens_stack;
  if (use_attention) {
    Runner::Flow attn_stack = S == 1 ? attentions[0] : run.stack(attentions);
    if (model.mode == FusionMode::NoSoftmax) {
      weights = attn_stack;
    } else {
      weights = run.softmax(attn_stack);
    }
    have_weights = true;
    fused_in = run.mul(weights, dens_stack);
  }

  Runner::Flow fused;
  if (model.mode == FusionMode::Sum) {
    fused = S == 1 ? fused_in : run.sum_channels(fused_in);
  } else {
    fused = run.conv(fused_in, *model.fusion);
  }
  fused = run.activate(fused, Activation::Relu);

  PyramidOutput out;
  out.fused = fused.value();
  out.fused_node = fused.node;
  for (const Runner::Flow& d : densities) out.scale_densities.push_back(d.value());
  if (model.mode != FusionMode::Fixed) {
    for (int si = 0; si < S; ++si) {
      out.attention_maps.push_back(have_weights ? take_channel(weights.value(), si)
                                                : Tensor4(image.n, 1, out_h, out_w, 1.0f));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weight files
// ---------------------------------------------------------------------------

namespace {

void put_bytes(std::ostream& os, const void* p, std::size_t len) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(len));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  put_bytes(os, b, 4);
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

bool get_bytes(std::istream& is, void* p, std::size_t len) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(len));
  return static_cast<std::size_t>(is.gcount()) == len;
}

std::uint32_t get_u32(std::istream& is, const std::string& field) {
  unsigned char b[4];
  if (!get_bytes(is, b, 4)) throw IoError("truncated weight file reading " + field);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is, const std::string& field) {
  const std::uint32_t v = get_u32(is, field);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

struct WeightHeader {
  std::string config_name;
  std::uint32_t num_scales = 0;
  FusionMode mode = FusionMode::Adaptive;
};

WeightHeader read_header(std::istream& is) {
  char magic[4];
  if (!get_bytes(is, magic, 4)) throw IoError("truncated weight file reading magic");
  if (std::memcmp(magic, kWeightMagic, 4) != 0) {
    throw IoError("bad magic: not a PYRD weight file");
  }
  const std::uint32_t version = get_u32(is, "version");
  if (version != kWeightVersion) {
    throw IoError("unsupported weight file version " + std::to_string(version));
  }
  const std::uint32_t name_len = get_u32(is, "config-name length");
  if (name_len > 4096) throw IoError("implausible config-name length");
  std::string name(name_len, '\0');
  if (!get_bytes(is, name.data(), name_len)) {
    throw IoError("truncated weight file reading config-name");
  }
  WeightHeader h;
  h.config_name = name;
  h.num_scales = get_u32(is, "scale count");
  unsigned char mode_b;
  if (!get_bytes(is, &mode_b, 1)) throw IoError("truncated weight file reading fusion mode");
  if (mode_b > 3) throw IoError("bad fusion mode byte " + std::to_string(mode_b));
  h.mode = static_cast<FusionMode>(mode_b);
  return h;
}

void read_tensors_into(std::istream& is, PyramidModel& model) {
  for (ParamRef& p : parameters(model)) {
    const std::uint32_t rank = get_u32(is, p.name + " rank");
    if (rank != p.shape.size()) {
      throw IoError("rank mismatch for " + p.name + ": file has " + std::to_string(rank) +
                    ", model expects " + std::to_string(p.shape.size()));
    }
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = get_u32(is, p.name + " dims");
      if (dim != p.shape[d]) {
        throw IoError("shape mismatch for " + p.name + ": file dim " + std::to_string(d) +
                      " is " + std::to_string(dim) + ", model expects " +
                      std::to_string(p.shape[d]));
      }
      count *= dim;
    }
    for (std::size_t i = 0; i < count; ++i) p.value[i] = get_f32(is, p.name + " data");
  }
  // Anything left over means the file was written for a different model.
  char extra;
  if (is.read(&extra, 1).gcount() == 1) {
    throw IoError("weight file has trailing data beyond the model's parameters");
  }
}

}  // namespace

std::vector<float> default_scales(int s) {
  switch (s) {
    case 1: return {1.0f};
    case 2: return {1.0f, 0.7f};
    case 3: return {1.0f, 0.7f, 0.5f};
    default:
      throw ConfigError("no default scale list for " + std::to_string(s) +
                        " scales; pass scales explicitly");
  }
}

void save_weights(const PyramidModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  put_bytes(os, kWeightMagic, 4);
  put_u32(os, kWeightVersion);
  const std::string& name = model.backbone.config.name;
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  put_bytes(os, name.data(), name.size());
  put_u32(os, static_cast<std::uint32_t>(model.scales.size()));
  const unsigned char mode_b = static_cast<unsigned char>(model.mode);
  put_bytes(os, &mode_b, 1);
  for (const ParamRef& p : parameters(const_cast<PyramidModel&>(model))) {
    put_u32(os, static_cast<std::uint32_t>(p.shape.size()));
    for (std::uint32_t d : p.shape) put_u32(os, d);
    for (float v : p.value) put_f32(os, v);
  }
  if (!os) throw IoError("failed writing weight file '" + path + "'");
}

PyramidModel load_weights(const std::string& path, const std::vector<float>* scales_override) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weight file '" + path + "'");
  const WeightHeader h = read_header(is);
  std::vector<float> scales = scales_override
                                  ? *scales_override
                                  : default_scales(static_cast<int>(h.num_scales));
  if (scales.size() != h.num_scales) {
    throw IoError("scale count mismatch: file has " + std::to_string(h.num_scales) +
                  ", override has " + std::to_string(scales.size()));
  }
  PyramidModel model =
      make_pyramid_model(builtin_config(h.config_name), std::move(scales), h.mode, 0);
  read_tensors_into(is, model);
  return model;
}

WeightFileInfo read_weight_file_info(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weight file '" + path + "'");
  const WeightHeader h = read_header(is);
  return {h.config_name, static_cast<int>(h.num_scales), h.mode};
}

void load_weights_into(PyramidModel& model, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weight file '" + path + "'");
  const WeightHeader h = read_header(is);
  if (h.config_name != model.backbone.config.name) {
    throw IoError("config-name mismatch: file has '" + h.config_name + "', model is '" +
                  model.backbone.config.name + "'");
  }
  if (h.num_scales != static_cast<std::uint32_t>(model.num_scales())) {
    throw IoError("scale count mismatch: file has " + std::to_string(h.num_scales) +
                  ", model has " + std::to_string(model.num_scales()));
  }
  if (h.mode != model.mode) {
    throw IoError("fusion mode mismatch: file has '" + to_string(h.mode) + "', model is '" +
                  to_string(model.mode) + "'");
  }
  read_tensors_into(is, model);
}

}  // namespace pyrd
