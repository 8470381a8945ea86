#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cbt/config.hpp"
#include "cbt/errors.hpp"
#include "cbt/graph.hpp"
#include "cbt/networks.hpp"
#include "cbt/ops.hpp"
#include "cbt/rng.hpp"
#include "cbt/types.hpp"

namespace cbt {

struct LossReport {
  double rec = 0;
  double adv_g = 0;
  double adv_d = 0;
  double cb = 0;
  double total_g = 0;
  double total_d = 0;
  bool operator==(const LossReport&) const = default;
};

// KL(N(mu, s^2 I) || N(0, s^2 I)) = ||mu||^2 / (2 s^2).
inline double content_bottleneck_loss(std::span<const float> c_mean, double sigma) {
  if (!(sigma > 0) || !std::isfinite(sigma)) throw ValidationError("sigma must be positive and finite");
  double s = 0;
  for (float v : c_mean) {
    if (!std::isfinite(v)) throw ValidationError("content code contains non-finite values");
    s += static_cast<double>(v) * v;
  }
  return s / (2.0 * sigma * sigma);
}

inline double content_bottleneck_loss(const ContentCode& c_mean, double sigma) {
  return content_bottleneck_loss(c_mean.values.span(), sigma);
}

inline Tensor<float> gaussian_noise(const Shape& shape, double sigma, RngStream& rng) {
  Tensor<float> z(shape);
  for (auto& v : z.vec()) v = static_cast<float>(sigma * rng.normal());
  return z;
}

// c_mean + sigma * n, n ~ N(0, I) from `rng`.
inline ContentCode sample_content_noise(const ContentCode& c_mean, double sigma, RngStream& rng) {
  if (!(sigma > 0)) throw ValidationError("sigma must be positive");
  ContentCode out{gaussian_noise(c_mean.values.shape(), sigma, rng)};
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += c_mean.values[i];
  return out;
}

// Scalar reductions of the objective. All inputs are batched along dim 0.
namespace loss_ops {

// Batch mean of the per-sample KL term.
template <class T>
Var bottleneck_kl(Graph<T>& g, Var c_mean, double sigma) {
  const auto& cv = g.value(c_mean);
  const double n = cv.dim(0);
  const auto acc = ops::detail::dot_wide(cv.data(), cv.data(), cv.size());
  const auto denom = ops::detail::Acc<T>(2.0 * sigma * sigma * n);
  Tensor<T> out(Shape{1}, ops::detail::narrow<T>(acc / denom));
  return ops::emit(g, std::move(out), {c_mean}, [&g, c_mean, sigma, n](const Tensor<T>& go) {
    const auto& cv = g.value(c_mean);
    auto& gc = g.grad_buffer(c_mean);
    using R = real_of_t<T>;
    const T k = go[0] / T(static_cast<R>(sigma * sigma * n));
    for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += k * cv[i];
  });
}

// Reparameterised sample: the noise is a constant, so d(out)/d(c_mean) = I.
template <class T>
Var add_noise(Graph<T>& g, Var c_mean, const Tensor<float>& noise) {
  return ops::add(g, c_mean, g.constant(noise));
}

template <class T>
Var l1_mean(Graph<T>& g, Var a, Var b) {
  return ops::mean(g, ops::abs(g, ops::sub(g, a, b)));
}

// mean softplus(-logit): cross-entropy of logits labelled real.
template <class T>
Var real_logit_loss(Graph<T>& g, Var logits) {
  return ops::mean(g, ops::softplus(g, ops::scale(g, logits, -1.0)));
}

// mean softplus(logit): cross-entropy of logits labelled fake.
template <class T>
Var fake_logit_loss(Graph<T>& g, Var logits) {
  return ops::mean(g, ops::softplus(g, logits));
}

template <class T>
double scalar(const Graph<T>& g, Var v) {
  return static_cast<double>(value_part(g.value(v)[0]));
}

}  // namespace loss_ops

// Generator-side objective. `total_g` is rec + lambda_adv * adv_g +
// lambda_cb * cb; exposed weights let each term be isolated.
struct ObjectiveWeights {
  double rec = 1.0;
  double adv = 1.0;
  double cb = 1e-4;

  static ObjectiveWeights from(const TrainConfig& c) { return {1.0, c.lambda_adv, c.lambda_cb}; }
};

enum class StyleSource { reference, latent };

// Everything random about one generator-side pass, drawn in advance.
struct GeneratorInputs {
  Tensor<float> x;  // [N, 3, S, S] source images
  std::vector<int> y;
  std::vector<int> y_target;
  StyleSource style_source = StyleSource::reference;
  Tensor<float> x_ref;  // reference images (reference steps)
  Tensor<float> z;      // latent codes (latent steps)
  Tensor<float> noise_translate;  // content noise for E_c(x)
  Tensor<float> noise_cycle;      // content noise for E_c(x_hat)
};

// Compile-time policies: the full model, and a reference build with the
// bottleneck code path removed (no noise, cb reported but never optimised).
struct WithContentBottleneck {
  static constexpr bool enabled = true;
};
struct WithoutContentBottleneck {
  static constexpr bool enabled = false;
};

template <class T>
struct GeneratorObjective {
  double rec = 0;
  double adv_g = 0;
  double cb = 0;
  double total = 0;
  Tensor<float> translated;  // x_hat, value part
  std::map<std::string, Tensor<T>> grads;
};

namespace loss_detail {

template <class T>
Var style_for(Graph<T>& g, const Networks& nets, const GeneratorInputs& in) {
  if (in.style_source == StyleSource::reference)
    return nets.style_encoder.forward(g, g.constant(in.x_ref), std::span<const int>(in.y_target));
  return nets.mapping.forward(g, g.constant(in.z), std::span<const int>(in.y_target));
}

template <class T>
Tensor<float> value_tensor(const Tensor<T>& t) {
  Tensor<float> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(value_part(t[i]));
  return out;
}

}  // namespace loss_detail

// Translation x_hat = G(E_c(x) + n1, s_hat), adversarial term on (x_hat, y_hat),
// cycle G(E_c(x_hat) + n2, E_s(x, y)) against x, and the KL term averaged over
// both content encodings. Discriminator parameters are frozen in this pass.
template <class T, class Bottleneck = WithContentBottleneck>
GeneratorObjective<T> generator_objective(const Networks& nets, const GeneratorInputs& in, const TrainConfig& cfg,
                                          const ObjectiveWeights& w,
                                          const std::map<std::string, Tensor<T>>* overrides = nullptr) {
  using namespace loss_ops;
  Graph<T> g;
  g.set_param_overrides(overrides);
  g.set_trainable([](const std::string& name) { return is_generator_side(name); });

  const std::span<const int> y(in.y), yt(in.y_target);
  Var s_hat = loss_detail::style_for(g, nets, in);
  Var cm = nets.content_encoder.forward(g, g.constant(in.x));
  Var c = cm;
  if constexpr (Bottleneck::enabled) c = add_noise(g, cm, in.noise_translate);
  Var fake = nets.generator.forward(g, c, s_hat);
  Var adv = real_logit_loss(g, nets.discriminator.forward(g, fake, yt));

  Var s_x = nets.style_encoder.forward(g, g.constant(in.x), y);
  Var cm2 = nets.content_encoder.forward(g, fake);
  Var c2 = cm2;
  if constexpr (Bottleneck::enabled) c2 = add_noise(g, cm2, in.noise_cycle);
  Var rec = l1_mean(g, nets.generator.forward(g, c2, s_x), g.constant(in.x));

  GeneratorObjective<T> out;
  Var total = ops::add(g, ops::scale(g, rec, w.rec), ops::scale(g, adv, w.adv));
  if constexpr (Bottleneck::enabled) {
    Var cb = ops::scale(g, ops::add(g, bottleneck_kl(g, cm, cfg.sigma), bottleneck_kl(g, cm2, cfg.sigma)), 0.5);
    total = ops::add(g, total, ops::scale(g, cb, w.cb));
    out.cb = scalar(g, cb);
  } else {
    Graph<T> diag(false);
    out.cb = 0.5 * (scalar(diag, bottleneck_kl(diag, diag.constant(g.value(cm)), cfg.sigma)) +
                    scalar(diag, bottleneck_kl(diag, diag.constant(g.value(cm2)), cfg.sigma)));
  }
  g.backward(total);
  out.rec = scalar(g, rec);
  out.adv_g = scalar(g, adv);
  out.total = w.rec * out.rec + w.adv * out.adv_g + (w.cb == 0 ? 0.0 : w.cb * out.cb);
  out.translated = loss_detail::value_tensor(g.value(fake));
  out.grads = g.param_grads();
  return out;
}

struct AdversarialTerms {
  double real = 0;  // mean softplus(-D(x, y))
  double fake = 0;  // mean softplus(D(x_hat, y_hat))
  double r1 = 0;    // gamma / 2 * mean ||grad_x D(x, y)||^2
  double adv_d() const { return real + fake + r1; }
};

template <class R>
struct DiscriminatorObjective {
  AdversarialTerms terms;
  std::map<std::string, Tensor<R>> grads;  // of weight * adv_d
};

namespace loss_detail {

template <class R>
void accumulate(std::map<std::string, Tensor<R>>& into, const std::map<std::string, Tensor<R>>& from) {
  for (const auto& [name, t] : from) {
    auto [it, fresh] = into.emplace(name, t);
    if (!fresh)
      for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += t[i];
  }
}

inline bool is_discriminator(const std::string& name) { return !is_generator_side(name); }

}  // namespace loss_detail

// Gradient of weight * (real + fake + r1) w.r.t. the discriminator.
//
// The R1 gradient needs d/dtheta of ||grad_x D||^2. With g_i = grad_x D_i
// from a first pass, a second pass over Dual scalars whose image tangent is
// g_i and whose backward seed is (gamma/N, w_i) returns, in the tangent part
// of every parameter gradient, w_i * grad D_i + (gamma/N) * H_{theta x} g_i,
// i.e. the real-logit cross-entropy gradient plus the R1 gradient.
template <class R>
DiscriminatorObjective<R> discriminator_objective(const Discriminator& d, const Tensor<float>& real_x,
                                                  std::span<const int> real_y, const Tensor<float>& fake_x,
                                                  std::span<const int> fake_y, double r1_gamma, double weight,
                                                  const std::map<std::string, Tensor<R>>* overrides = nullptr) {
  using namespace loss_ops;
  using D = Dual<R>;
  DiscriminatorObjective<R> out;
  const auto trainable = [](const std::string& n) { return loss_detail::is_discriminator(n); };

  {
    Graph<R> g;
    g.set_param_overrides(overrides);
    g.set_trainable(trainable);
    Var loss = fake_logit_loss(g, d.forward(g, g.constant(fake_x), fake_y));
    out.terms.fake = scalar(g, loss);
    g.backward(loss, Tensor<R>(Shape{1}, R(weight)));
    out.grads = g.param_grads();
  }

  const int n = real_x.dim(0);
  Graph<R> ga;
  ga.set_param_overrides(overrides);
  ga.set_trainable([](const std::string&) { return false; });
  Var x = ga.leaf(Tensor<R>(real_x.shape(), std::vector<R>(real_x.vec().begin(), real_x.vec().end())));
  Var logits = d.forward(ga, x, real_y);
  {
    Graph<R> tmp(false);
    out.terms.real = scalar(tmp, real_logit_loss(tmp, tmp.constant(ga.value(logits))));
  }
  // d(mean softplus(-l)) / dl_i = -sigmoid(-l_i) / N
  std::vector<R> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] = -ops::detail::sigmoid(-ga.value(logits)[static_cast<std::size_t>(i)]) / R(n);

  if (r1_gamma > 0) {
    ga.backward(logits);
    const Tensor<R>& gx = ga.grad(x);
    double sq = 0;
    for (std::size_t i = 0; i < gx.size(); ++i) sq += static_cast<double>(gx[i]) * gx[i];
    out.terms.r1 = 0.5 * r1_gamma * sq / n;

    std::map<std::string, Tensor<D>> dual_overrides;
    if (overrides != nullptr)
      for (const auto& [name, t] : *overrides) {
        Tensor<D> dt(t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) dt[i] = D(t[i]);
        dual_overrides.emplace(name, std::move(dt));
      }
    Graph<D> gb;
    gb.set_param_overrides(overrides != nullptr ? &dual_overrides : nullptr);
    gb.set_trainable(trainable);
    Tensor<D> xd(real_x.shape());
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] = D(R(real_x[i]), gx[i]);
    Var lb = d.forward(gb, gb.constant(std::move(xd)), real_y);
    Tensor<D> seed(Shape{n, 1});
    for (int i = 0; i < n; ++i)
      seed[static_cast<std::size_t>(i)] = D(R(weight * r1_gamma / n), R(weight) * w[static_cast<std::size_t>(i)]);
    gb.backward(lb, std::move(seed));
    std::map<std::string, Tensor<R>> real_grads;
    for (const auto& [name, t] : gb.param_grads()) {
      Tensor<R> rt(t.shape());
      for (std::size_t i = 0; i < t.size(); ++i) rt[i] = t[i].t;
      real_grads.emplace(name, std::move(rt));
    }
    loss_detail::accumulate(out.grads, real_grads);
  } else {
    Graph<R> gb;
    gb.set_param_overrides(overrides);
    gb.set_trainable(trainable);
    Var lb = d.forward(gb, gb.constant(real_x), real_y);
    Tensor<R> seed(Shape{n, 1});
    for (int i = 0; i < n; ++i) seed[static_cast<std::size_t>(i)] = R(weight) * w[static_cast<std::size_t>(i)];
    gb.backward(lb, std::move(seed));
    loss_detail::accumulate(out.grads, gb.param_grads());
  }
  return out;
}

// Value-only adversarial terms on a batch: (adv_d including R1, adv_g).
struct AdversarialLosses {
  double adv_d = 0;
  double adv_g = 0;
  double r1 = 0;
};

inline AdversarialLosses adversarial_losses(const Discriminator& d, const Tensor<float>& real_x,
                                            std::span<const int> real_y, const Tensor<float>& fake_x,
                                            std::span<const int> fake_y, double r1_gamma = 0.0) {
  using namespace loss_ops;
  net_detail::check_labels(real_y, d.config().num_domains);
  net_detail::check_labels(fake_y, d.config().num_domains);
  AdversarialLosses out;
  Graph<float> gf(false);
  Var lf = d.forward(gf, gf.constant(fake_x), fake_y);
  out.adv_g = scalar(gf, real_logit_loss(gf, lf));
  const double fake = scalar(gf, fake_logit_loss(gf, lf));

  Graph<float> gr;
  gr.set_trainable([](const std::string&) { return false; });
  Var x = gr.leaf(real_x);
  Var lr = d.forward(gr, x, real_y);
  double real;
  {
    Graph<float> tmp(false);
    real = scalar(tmp, real_logit_loss(tmp, tmp.constant(gr.value(lr))));
  }
  if (r1_gamma > 0) {
    gr.backward(lr);
    double sq = 0;
    for (float v : gr.grad(x).vec()) sq += static_cast<double>(v) * v;
    out.r1 = 0.5 * r1_gamma * sq / real_x.dim(0);
  }
  out.adv_d = real + fake + out.r1;
  return out;
}

// Single-image form.
inline AdversarialLosses adversarial_losses(const Discriminator& d, const Image& real_x, DomainLabel real_y,
                                            const Image& fake_x, DomainLabel fake_y, double r1_gamma = 0.0) {
  const int ry = real_y.index, fy = fake_y.index;
  return adversarial_losses(d, net_detail::as_batch(real_x), std::span<const int>(&ry, 1), net_detail::as_batch(fake_x),
                            std::span<const int>(&fy, 1), r1_gamma);
}

// Mean |G(E_c(x_translated), E_s(x, y)) - x| with mean content codes.
inline double cycle_reconstruction_loss(const Generator& gen, const ContentEncoder& e_c, const StyleEncoder& e_s,
                                        const Image& x, DomainLabel y, const Image& x_translated) {
  if (x.pixels().shape() != x_translated.pixels().shape())
    throw DimensionError("cycle reconstruction: image shapes differ " + shape_str(x.pixels().shape()) + " vs " +
                         shape_str(x_translated.pixels().shape()));
  DomainLabel::checked(y.index, e_s.config().num_domains);
  const int label = y.index;
  Graph<float> g(false);
  Var s = e_s.forward(g, g.constant(net_detail::as_batch(x)), std::span<const int>(&label, 1));
  Var c = e_c.forward(g, g.constant(net_detail::as_batch(x_translated)));
  Var out = gen.forward(g, c, s);
  return loss_ops::scalar(g, loss_ops::l1_mean(g, out, g.constant(net_detail::as_batch(x))));
}

// Mean absolute error between two equally shaped images.
inline double l1_distance(const Image& a, const Image& b) {
  if (a.pixels().shape() != b.pixels().shape()) throw DimensionError("l1_distance: image shapes differ");
  double s = 0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) s += std::fabs(static_cast<double>(a.pixels()[i]) - b.pixels()[i]);
  return s / static_cast<double>(a.pixels().size());
}

// Weighted totals; any non-finite component aborts the run at `step`.
inline LossReport total_objective(double rec, double adv_g, double adv_d, double cb, const TrainConfig& cfg,
                                  std::int64_t step = 0) {
  LossReport r{rec, adv_g, adv_d, cb, 0, 0};
  for (auto [name, v] : {std::pair{"rec", rec}, {"adv_g", adv_g}, {"adv_d", adv_d}, {"cb", cb}})
    if (!std::isfinite(v)) throw DivergenceError(step, std::string("non-finite ") + name + " loss");
  r.total_g = rec + cfg.lambda_adv * adv_g + (cfg.lambda_cb == 0 ? 0.0 : cfg.lambda_cb * cb);
  r.total_d = cfg.lambda_adv * adv_d;
  if (!std::isfinite(r.total_g) || !std::isfinite(r.total_d)) throw DivergenceError(step, "non-finite total loss");
  return r;
}

}  // namespace cbt
