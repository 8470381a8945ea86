#pragma once

#include <cmath>
#include <string>

#include "cbt/checkpoint.hpp"
#include "cbt/ops.hpp"
#include "cbt/rng.hpp"

// Parameter creation and the residual building blocks shared by the networks.
// Parameters live in a ParamMap under `<network>.<block>.<layer>.<tensor>`.
namespace cbt::layers {

inline Tensor<float> he_normal(Shape shape, int fan_in, RngStream& rng) {
  Tensor<float> t(std::move(shape));
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : t.vec()) v = static_cast<float>(rng.normal() * std);
  return t;
}

inline void add_conv(ParamMap& p, RngStream& rng, const std::string& name, int cin, int cout, int k, bool bias = true) {
  p[name + ".weight"] = he_normal(Shape{cout, cin, k, k}, cin * k * k, rng);
  if (bias) p[name + ".bias"] = Tensor<float>(Shape{cout});
}

inline void add_linear(ParamMap& p, RngStream& rng, const std::string& name, int in, int out) {
  p[name + ".weight"] = he_normal(Shape{out, in}, in, rng);
  p[name + ".bias"] = Tensor<float>(Shape{out});
}

inline void add_affine(ParamMap& p, const std::string& name, int c) {
  p[name + ".weight"] = Tensor<float>(Shape{c}, 1.0f);
  p[name + ".bias"] = Tensor<float>(Shape{c});
}

template <class T>
Var param(Graph<T>& g, const ParamMap& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ValidationError("missing parameter '" + name + "'");
  return g.param(name, it->second);
}

template <class T>
Var conv(Graph<T>& g, const ParamMap& p, const std::string& name, Var x, int pad) {
  Var b = p.count(name + ".bias") ? param(g, p, name + ".bias") : Var{};
  return ops::conv2d(g, x, param(g, p, name + ".weight"), b, pad);
}

template <class T>
Var linear(Graph<T>& g, const ParamMap& p, const std::string& name, Var x) {
  return ops::linear(g, x, param(g, p, name + ".weight"), param(g, p, name + ".bias"));
}

template <class T>
Var instance_norm_affine(Graph<T>& g, const ParamMap& p, const std::string& name, Var x) {
  Var n = ops::instance_norm(g, x);
  return ops::channel_affine(g, n, param(g, p, name + ".weight"), param(g, p, name + ".bias"), 0.0);
}

// Pre-activation residual block with optional instance norm and 2x average
// pooling; output is (residual + shortcut) / sqrt(2).
inline void add_res_block(ParamMap& p, RngStream& rng, const std::string& name, int cin, int cout, bool normalize) {
  if (normalize) {
    add_affine(p, name + ".norm1", cin);
    add_affine(p, name + ".norm2", cin);
  }
  add_conv(p, rng, name + ".conv1", cin, cin, 3);
  add_conv(p, rng, name + ".conv2", cin, cout, 3);
  if (cin != cout) add_conv(p, rng, name + ".shortcut", cin, cout, 1, false);
}

template <class T>
Var res_block(Graph<T>& g, const ParamMap& p, const std::string& name, Var x, bool normalize, bool downsample) {
  Var sc = x;
  if (p.count(name + ".shortcut.weight")) sc = conv(g, p, name + ".shortcut", sc, 0);
  if (downsample) sc = ops::avg_pool2(g, sc);
  Var h = x;
  if (normalize) h = instance_norm_affine(g, p, name + ".norm1", h);
  h = conv(g, p, name + ".conv1", ops::leaky_relu(g, h), 1);
  if (downsample) h = ops::avg_pool2(g, h);
  if (normalize) h = instance_norm_affine(g, p, name + ".norm2", h);
  h = conv(g, p, name + ".conv2", ops::leaky_relu(g, h), 1);
  return ops::scale(g, ops::add(g, h, sc), 1.0 / std::sqrt(2.0));
}

// AdaIN: (1 + gamma(s)) * IN(x) + beta(s), gamma and beta from one linear map
// of the style code. With `identity` the modulation is forced to scale 1,
// shift 0 and the style code is not consulted.
inline void add_adain(ParamMap& p, RngStream& rng, const std::string& name, int style_dim, int c) {
  add_linear(p, rng, name + ".fc", style_dim, 2 * c);
}

template <class T>
Var adain(Graph<T>& g, const ParamMap& p, const std::string& name, Var x, Var style, bool identity) {
  Var n = ops::instance_norm(g, x);
  const int c = g.value(x).dim(1);
  if (identity) {
    const int batch = g.value(x).dim(0);
    Var zeros = g.constant(Tensor<T>(Shape{batch, c}));
    return ops::channel_affine(g, n, zeros, zeros, 1.0);
  }
  Var h = linear(g, p, name + ".fc", style);
  return ops::channel_affine(g, n, ops::slice_cols(g, h, 0, c), ops::slice_cols(g, h, c, c), 1.0);
}

inline void add_adain_res_block(ParamMap& p, RngStream& rng, const std::string& name, int cin, int cout, int style_dim) {
  add_adain(p, rng, name + ".adain1", style_dim, cin);
  add_adain(p, rng, name + ".adain2", style_dim, cout);
  add_conv(p, rng, name + ".conv1", cin, cout, 3);
  add_conv(p, rng, name + ".conv2", cout, cout, 3);
  if (cin != cout) add_conv(p, rng, name + ".shortcut", cin, cout, 1, false);
}

template <class T>
Var adain_res_block(Graph<T>& g, const ParamMap& p, const std::string& name, Var x, Var style, bool upsample,
                    bool identity_adain) {
  Var sc = x;
  if (upsample) sc = ops::upsample2(g, sc);
  if (p.count(name + ".shortcut.weight")) sc = conv(g, p, name + ".shortcut", sc, 0);
  Var h = ops::leaky_relu(g, adain(g, p, name + ".adain1", x, style, identity_adain));
  if (upsample) h = ops::upsample2(g, h);
  h = conv(g, p, name + ".conv1", h, 1);
  h = ops::leaky_relu(g, adain(g, p, name + ".adain2", h, style, identity_adain));
  h = conv(g, p, name + ".conv2", h, 1);
  return ops::scale(g, ops::add(g, h, sc), 1.0 / std::sqrt(2.0));
}

}  // namespace cbt::layers
