#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "cbt/config.hpp"
#include "cbt/layers.hpp"
#include "cbt/types.hpp"

namespace cbt {

namespace net_detail {

inline int width_at(const TrainConfig& c, int level) {
  return static_cast<int>(std::min<std::int64_t>(c.base_channels << level, c.max_channels));
}

inline int log2i(std::int64_t v) {
  int r = 0;
  while ((std::int64_t{1} << (r + 1)) <= v) ++r;
  return r;
}

inline void check_labels(std::span<const int> labels, std::int64_t num_domains) {
  for (int y : labels) DomainLabel::checked(y, num_domains);
}

inline void check_image_batch(const Shape& s, const TrainConfig& c, const char* who) {
  if (s.size() != 4 || s[1] != 3 || s[2] != c.image_size || s[3] != c.image_size)
    throw DimensionError(std::string(who) + ": expected [N, 3, " + std::to_string(c.image_size) + ", " +
                         std::to_string(c.image_size) + "], got " + shape_str(s));
}

}  // namespace net_detail

// Downsampling residual stack with instance norm, ending in a 1x1 projection
// to the content channels. Deterministic: noise is added by the caller.
class ContentEncoder {
 public:
  static constexpr const char* kName = "content_encoder";

  explicit ContentEncoder(const TrainConfig& cfg) : cfg_(cfg) {}

  void init(RngStream& rng) {
    params_.clear();
    const std::string n = kName;
    layers::add_conv(params_, rng, n + ".stem.conv", 3, cfg_.base_channels, 3);
    for (int i = 0; i < cfg_.content_downsamples; ++i)
      layers::add_res_block(params_, rng, n + ".down" + std::to_string(i), net_detail::width_at(cfg_, i),
                            net_detail::width_at(cfg_, i + 1), true);
    const int w = bottleneck_width();
    layers::add_res_block(params_, rng, n + ".bottleneck", w, w, true);
    layers::add_conv(params_, rng, n + ".out.conv", w, cfg_.content_channels, 1);
  }

  // x: [N, 3, S, S] -> [N, content_channels, S / 2^d, S / 2^d]
  template <class T>
  Var forward(Graph<T>& g, Var x) const {
    net_detail::check_image_batch(g.value(x).shape(), cfg_, "content encoder");
    const std::string n = kName;
    Var h = layers::conv(g, params_, n + ".stem.conv", x, 1);
    for (int i = 0; i < cfg_.content_downsamples; ++i)
      h = layers::res_block(g, params_, n + ".down" + std::to_string(i), h, true, true);
    h = layers::res_block(g, params_, n + ".bottleneck", h, true, false);
    return layers::conv(g, params_, n + ".out.conv", h, 0);
  }

  Shape code_shape() const {
    const int s = static_cast<int>(cfg_.image_size >> cfg_.content_downsamples);
    return Shape{static_cast<int>(cfg_.content_channels), s, s};
  }
  int bottleneck_width() const { return net_detail::width_at(cfg_, static_cast<int>(cfg_.content_downsamples)); }

  const TrainConfig& config() const noexcept { return cfg_; }
  ParamMap& params() noexcept { return params_; }
  const ParamMap& params() const noexcept { return params_; }

 private:
  TrainConfig cfg_;
  ParamMap params_;
};

// Shared trunk of the style encoder and discriminator: residual downsampling
// to 4x4, a 4x4 valid convolution, then one linear head per domain. Only the
// head indexed by each sample's label contributes to its output.
class DomainHeadedTrunk {
 public:
  DomainHeadedTrunk(const TrainConfig& cfg, std::string name, int out_dim)
      : cfg_(cfg), name_(std::move(name)), out_dim_(out_dim) {}

  void init(RngStream& rng) {
    params_.clear();
    layers::add_conv(params_, rng, name_ + ".stem.conv", 3, cfg_.base_channels, 3);
    for (int i = 0; i < num_down(); ++i)
      layers::add_res_block(params_, rng, name_ + ".down" + std::to_string(i), net_detail::width_at(cfg_, i),
                            net_detail::width_at(cfg_, i + 1), false);
    const int w = feature_width();
    layers::add_conv(params_, rng, name_ + ".final.conv", w, w, 4);
    for (int k = 0; k < cfg_.num_domains; ++k) layers::add_linear(params_, rng, head_name(k), w, out_dim_);
  }

  template <class T>
  Var forward(Graph<T>& g, Var x, std::span<const int> labels) const {
    net_detail::check_image_batch(g.value(x).shape(), cfg_, name_.c_str());
    net_detail::check_labels(labels, cfg_.num_domains);
    Var h = layers::conv(g, params_, name_ + ".stem.conv", x, 1);
    for (int i = 0; i < num_down(); ++i)
      h = layers::res_block(g, params_, name_ + ".down" + std::to_string(i), h, false, true);
    h = ops::leaky_relu(g, h);
    h = ops::leaky_relu(g, layers::conv(g, params_, name_ + ".final.conv", h, 0));
    h = ops::flatten(g, h);
    std::vector<Var> heads;
    for (int k = 0; k < cfg_.num_domains; ++k) heads.push_back(layers::linear(g, params_, head_name(k), h));
    return ops::select_rows<T>(g, heads, labels);
  }

  std::string head_name(int k) const { return name_ + ".head" + std::to_string(k) + ".linear"; }
  int num_down() const { return net_detail::log2i(cfg_.image_size) - 2; }
  int feature_width() const { return net_detail::width_at(cfg_, num_down()); }
  int out_dim() const noexcept { return out_dim_; }

  const TrainConfig& config() const noexcept { return cfg_; }
  ParamMap& params() noexcept { return params_; }
  const ParamMap& params() const noexcept { return params_; }

 private:
  TrainConfig cfg_;
  std::string name_;
  int out_dim_;
  ParamMap params_;
};

class StyleEncoder : public DomainHeadedTrunk {
 public:
  static constexpr const char* kName = "style_encoder";
  explicit StyleEncoder(const TrainConfig& cfg) : DomainHeadedTrunk(cfg, kName, static_cast<int>(cfg.style_dim)) {}
};

class Discriminator : public DomainHeadedTrunk {
 public:
  static constexpr const char* kName = "discriminator";
  explicit Discriminator(const TrainConfig& cfg) : DomainHeadedTrunk(cfg, kName, 1) {}
};

// Latent -> style: shared fully-connected trunk, then domain-specific layers.
class MappingNetwork {
 public:
  static constexpr const char* kName = "mapping";

  explicit MappingNetwork(const TrainConfig& cfg) : cfg_(cfg) {}

  void init(RngStream& rng) {
    params_.clear();
    const std::string n = kName;
    const int h = static_cast<int>(cfg_.mapping_hidden);
    layers::add_linear(params_, rng, n + ".shared.fc0", static_cast<int>(cfg_.latent_dim), h);
    layers::add_linear(params_, rng, n + ".shared.fc1", h, h);
    for (int k = 0; k < cfg_.num_domains; ++k) {
      layers::add_linear(params_, rng, unshared(k) + ".fc0", h, h);
      layers::add_linear(params_, rng, unshared(k) + ".fc1", h, static_cast<int>(cfg_.style_dim));
    }
  }

  // z: [N, latent_dim] -> [N, style_dim]
  template <class T>
  Var forward(Graph<T>& g, Var z, std::span<const int> labels) const {
    const auto& s = g.value(z).shape();
    if (s.size() != 2 || s[1] != cfg_.latent_dim)
      throw DimensionError("mapping network: expected [N, " + std::to_string(cfg_.latent_dim) + "], got " + shape_str(s));
    net_detail::check_labels(labels, cfg_.num_domains);
    const std::string n = kName;
    Var h = ops::relu(g, layers::linear(g, params_, n + ".shared.fc0", z));
    h = ops::relu(g, layers::linear(g, params_, n + ".shared.fc1", h));
    std::vector<Var> outs;
    for (int k = 0; k < cfg_.num_domains; ++k) {
      Var u = ops::relu(g, layers::linear(g, params_, unshared(k) + ".fc0", h));
      outs.push_back(layers::linear(g, params_, unshared(k) + ".fc1", u));
    }
    return ops::select_rows<T>(g, outs, labels);
  }

  std::string unshared(int k) const { return std::string(kName) + ".domain" + std::to_string(k); }

  const TrainConfig& config() const noexcept { return cfg_; }
  ParamMap& params() noexcept { return params_; }
  const ParamMap& params() const noexcept { return params_; }

 private:
  TrainConfig cfg_;
  ParamMap params_;
};

// Upsampling AdaIN residual stack. The style code enters only through the
// AdaIN scale/shift; the domain label is not an input.
class Generator {
 public:
  static constexpr const char* kName = "generator";

  explicit Generator(const TrainConfig& cfg) : cfg_(cfg) {}

  void init(RngStream& rng) {
    params_.clear();
    const std::string n = kName;
    const int d = static_cast<int>(cfg_.content_downsamples);
    const int sd = static_cast<int>(cfg_.style_dim);
    const int w = net_detail::width_at(cfg_, d);
    layers::add_conv(params_, rng, n + ".stem.conv", static_cast<int>(cfg_.content_channels), w, 1);
    layers::add_adain_res_block(params_, rng, n + ".bottleneck", w, w, sd);
    for (int i = d; i > 0; --i)
      layers::add_adain_res_block(params_, rng, n + ".up" + std::to_string(d - i), net_detail::width_at(cfg_, i),
                                  net_detail::width_at(cfg_, i - 1), sd);
    layers::add_affine(params_, n + ".out.norm", static_cast<int>(cfg_.base_channels));
    layers::add_conv(params_, rng, n + ".out.conv", static_cast<int>(cfg_.base_channels), 3, 1);
  }

  // c: [N, content_channels, h', w'], s: [N, style_dim] -> [N, 3, S, S] in [-1, 1].
  template <class T>
  Var forward(Graph<T>& g, Var c, Var s, bool identity_adain = false) const {
    const auto& cs = g.value(c).shape();
    const int side = static_cast<int>(cfg_.image_size >> cfg_.content_downsamples);
    if (cs.size() != 4 || cs[1] != cfg_.content_channels || cs[2] != side || cs[3] != side)
      throw DimensionError("generator: content code shape " + shape_str(cs) + " does not match [N, " +
                           std::to_string(cfg_.content_channels) + ", " + std::to_string(side) + ", " +
                           std::to_string(side) + "]");
    const auto& ss = g.value(s).shape();
    if (ss.size() != 2 || ss[0] != cs[0] || ss[1] != cfg_.style_dim)
      throw DimensionError("generator: style shape " + shape_str(ss) + " does not match [" + std::to_string(cs[0]) +
                           ", " + std::to_string(cfg_.style_dim) + "]");
    const std::string n = kName;
    const int d = static_cast<int>(cfg_.content_downsamples);
    Var h = layers::conv(g, params_, n + ".stem.conv", c, 0);
    h = layers::adain_res_block(g, params_, n + ".bottleneck", h, s, false, identity_adain);
    for (int i = 0; i < d; ++i)
      h = layers::adain_res_block(g, params_, n + ".up" + std::to_string(i), h, s, true, identity_adain);
    h = ops::leaky_relu(g, layers::instance_norm_affine(g, params_, n + ".out.norm", h));
    return ops::tanh(g, layers::conv(g, params_, n + ".out.conv", h, 0));
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  ParamMap& params() noexcept { return params_; }
  const ParamMap& params() const noexcept { return params_; }

 private:
  TrainConfig cfg_;
  ParamMap params_;
};

// The five trainable networks of one model.
struct Networks {
  ContentEncoder content_encoder;
  StyleEncoder style_encoder;
  MappingNetwork mapping;
  Generator generator;
  Discriminator discriminator;

  explicit Networks(const TrainConfig& cfg)
      : content_encoder(cfg), style_encoder(cfg), mapping(cfg), generator(cfg), discriminator(cfg) {}

  // Parameter-init stream draws in a fixed network order.
  void init(RngStream& rng) {
    content_encoder.init(rng);
    style_encoder.init(rng);
    mapping.init(rng);
    generator.init(rng);
    discriminator.init(rng);
  }

  template <class F>
  void for_each_map(F&& f) {
    f(content_encoder.params());
    f(style_encoder.params());
    f(mapping.params());
    f(generator.params());
    f(discriminator.params());
  }

  template <class F>
  void for_each_map(F&& f) const {
    f(content_encoder.params());
    f(style_encoder.params());
    f(mapping.params());
    f(generator.params());
    f(discriminator.params());
  }

  ParamMap all_params() const {
    ParamMap out;
    for (const ParamMap* m : {&content_encoder.params(), &style_encoder.params(), &mapping.params(),
                              &generator.params(), &discriminator.params()})
      out.insert(m->begin(), m->end());
    return out;
  }

  // Replaces every parameter; keys and shapes must match the architecture.
  void load_params(const ParamMap& src) {
    if (all_params().empty()) {
      RngStream layout(0, "layout");  // values are overwritten below; only names and shapes matter
      init(layout);
    }
    std::size_t used = 0;
    for_each_map([&](ParamMap& m) {
      for (auto& [name, t] : m) {
        auto it = src.find(name);
        if (it == src.end()) throw ValidationError("checkpoint lacks parameter '" + name + "'");
        if (it->second.shape() != t.shape())
          throw DimensionError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                               shape_str(t.shape()));
        t = it->second;
        ++used;
      }
    });
    if (used != src.size()) throw ValidationError("checkpoint has parameters unknown to this architecture");
  }
};

inline bool is_generator_side(const std::string& name) {
  return name.rfind(Discriminator::kName, 0) != 0;
}

// ---- Single-image operations -------------------------------------------------

namespace net_detail {

inline Tensor<float> as_batch(const Image& x) {
  Shape s = x.pixels().shape();
  s.insert(s.begin(), 1);
  return x.pixels().reshaped(std::move(s));
}

inline Tensor<float> drop_batch(const Tensor<float>& t) {
  Shape s = t.shape();
  s.erase(s.begin());
  return t.reshaped(std::move(s));
}

}  // namespace net_detail

inline ContentCode encode_content(const ContentEncoder& enc, const Image& x) {
  Graph<float> g(false);
  Var out = enc.forward(g, g.constant(net_detail::as_batch(x)));
  return ContentCode{net_detail::drop_batch(g.value(out))};
}

inline StyleCode encode_style(const StyleEncoder& enc, const Image& x, DomainLabel y) {
  DomainLabel::checked(y.index, enc.config().num_domains);
  Graph<float> g(false);
  const int label = y.index;
  Var out = enc.forward(g, g.constant(net_detail::as_batch(x)), std::span<const int>(&label, 1));
  return StyleCode{net_detail::drop_batch(g.value(out))};
}

inline StyleCode map_latent(const MappingNetwork& m, const LatentCode& z, DomainLabel y) {
  DomainLabel::checked(y.index, m.config().num_domains);
  if (!all_finite(z.values)) throw ValidationError("latent code contains non-finite values");
  if (z.values.rank() != 1 || z.values.dim(0) != m.config().latent_dim)
    throw DimensionError("latent code must be [" + std::to_string(m.config().latent_dim) + "], got " +
                         shape_str(z.values.shape()));
  Graph<float> g(false);
  const int label = y.index;
  Var out = m.forward(g, g.constant(z.values.reshaped(Shape{1, z.values.dim(0)})), std::span<const int>(&label, 1));
  return StyleCode{net_detail::drop_batch(g.value(out))};
}

inline Image generate(const Generator& gen, const ContentCode& c, const StyleCode& s, bool identity_adain = false) {
  if (c.values.rank() != 3) throw DimensionError("content code must be [C, h, w], got " + shape_str(c.values.shape()));
  if (s.values.rank() != 1) throw DimensionError("style code must be [D], got " + shape_str(s.values.shape()));
  Graph<float> g(false);
  Shape cs = c.values.shape();
  cs.insert(cs.begin(), 1);
  Var out = gen.forward(g, g.constant(c.values.reshaped(cs)), g.constant(s.values.reshaped(Shape{1, s.values.dim(0)})),
                        identity_adain);
  return Image(net_detail::drop_batch(g.value(out)));
}

inline float discriminate(const Discriminator& d, const Image& x, DomainLabel y) {
  DomainLabel::checked(y.index, d.config().num_domains);
  Graph<float> g(false);
  const int label = y.index;
  Var out = d.forward(g, g.constant(net_detail::as_batch(x)), std::span<const int>(&label, 1));
  return g.value(out)[0];
}

}  // namespace cbt
