#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cbt/checkpoint.hpp"
#include "cbt/config.hpp"
#include "cbt/data.hpp"
#include "cbt/losses.hpp"
#include "cbt/networks.hpp"
#include "cbt/optim.hpp"
#include "cbt/rng.hpp"

namespace cbt {

struct TrainStepPlan {
  Tensor<float> x;  // [N, 3, S, S]
  std::vector<int> y;
  Tensor<float> x_ref;  // empty on latent steps
  std::vector<int> y_target;
  Tensor<float> z;  // [N, latent_dim]; empty on reference steps
  StyleSource style_source = StyleSource::reference;
  std::vector<int> x_indices;
  std::vector<int> ref_indices;
};

// Reference on even steps, latent on odd steps.
inline StyleSource style_source_for_step(std::int64_t step) {
  return step % 2 == 0 ? StyleSource::reference : StyleSource::latent;
}

// Draws x and y_target (and x_ref) from the data stream and z from the
// latent stream; x is uniform over the training split, y_target uniform over
// domains, x_ref uniform over the training images of y_target.
inline TrainStepPlan sample_step_plan(const DatasetManifest& m, const TrainConfig& cfg, RngStreams& rng,
                                      std::int64_t step) {
  const auto train = m.indices(Split::train);
  for (int d = 0; d < m.num_domains(); ++d)
    if (m.indices(Split::train, d).empty()) throw DatasetError("domain '" + m.domains[d] + "' has no training images");
  if (m.num_domains() != cfg.num_domains)
    throw ValidationError("dataset has " + std::to_string(m.num_domains()) + " domains but num_domains = " +
                          std::to_string(cfg.num_domains));
  const int n = static_cast<int>(cfg.batch_size);
  const int size = static_cast<int>(cfg.image_size);
  RngStream& data = rng.data();
  RngStream* flip = cfg.flip_augment ? &data : nullptr;

  TrainStepPlan p;
  p.style_source = style_source_for_step(step);
  for (int i = 0; i < n; ++i) p.x_indices.push_back(train[static_cast<std::size_t>(data.uniform_int(static_cast<int>(train.size())))]);
  for (int i = 0; i < n; ++i) p.y_target.push_back(data.uniform_int(m.num_domains()));
  Batch xb = load_batch(m, p.x_indices, size, flip);
  p.x = std::move(xb.images);
  p.y = std::move(xb.labels);
  if (p.style_source == StyleSource::reference) {
    for (int t : p.y_target) {
      const auto pool = m.indices(Split::train, t);
      p.ref_indices.push_back(pool[static_cast<std::size_t>(data.uniform_int(static_cast<int>(pool.size())))]);
    }
    p.x_ref = load_batch(m, p.ref_indices, size, flip).images;
  } else {
    p.z = gaussian_noise(Shape{n, static_cast<int>(cfg.latent_dim)}, 1.0, rng.latent());
  }
  return p;
}

// Complete mutable state of a run; round-trips through Checkpoint.
struct TrainingState {
  TrainConfig config;
  Networks nets;
  ParamMap ema;
  Adam optimizer;
  RngStreams rng;
  std::int64_t step = 0;

  explicit TrainingState(const TrainConfig& cfg) : config(cfg), nets(cfg), rng(static_cast<std::uint64_t>(cfg.seed)) {
    validate(cfg);
    nets.init(rng.init());
    ema = nets.all_params();
  }

  explicit TrainingState(const Checkpoint& c) : config(c.config), nets(c.config), rng(static_cast<std::uint64_t>(c.config.seed)) {
    nets.load_params(c.parameters);
    if (c.ema_parameters.size() != c.parameters.size()) throw ValidationError("checkpoint EMA table is incomplete");
    ema = c.ema_parameters;
    optimizer = Adam(c.optimizer_state);
    rng = RngStreams::deserialize(c.rng_state);
    step = c.step;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint c;
    c.config = config;
    c.parameters = nets.all_params();
    c.ema_parameters = ema;
    c.optimizer_state = optimizer.state();
    c.rng_state = rng.serialize();
    c.step = step;
    return c;
  }

  // Networks carrying the EMA weights (used for evaluation).
  Networks ema_networks() const {
    Networks n(config);
    n.load_params(ema);
    return n;
  }
};

namespace train_detail {

// FNV-1a over names and raw bytes of the selected parameters.
inline std::uint64_t param_digest(const Networks& nets, bool generator_side) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
  };
  nets.for_each_map([&](const ParamMap& m) {
    for (const auto& [name, t] : m) {
      if (is_generator_side(name) != generator_side) continue;
      mix(name.data(), name.size());
      mix(t.data(), t.size() * sizeof(float));
    }
  });
  return h;
}

inline void check_finite(const std::map<std::string, Tensor<float>>& grads, std::int64_t step) {
  for (const auto& [name, g] : grads)
    if (!all_finite(g)) throw DivergenceError(step, "non-finite gradient for '" + name + "'");
}

inline Tensor<float> translate_batch(const Networks& nets, const TrainStepPlan& plan, const Tensor<float>* noise) {
  Graph<float> g(false);
  const std::span<const int> yt(plan.y_target);
  Var s = plan.style_source == StyleSource::reference
              ? nets.style_encoder.forward(g, g.constant(plan.x_ref), yt)
              : nets.mapping.forward(g, g.constant(plan.z), yt);
  Var c = nets.content_encoder.forward(g, g.constant(plan.x));
  if (noise != nullptr) c = ops::add(g, c, g.constant(*noise));
  return g.value(nets.generator.forward(g, c, s));
}

}  // namespace train_detail

// One alternation of the min-max game: a discriminator update on
// lambda_adv * adv_d with freshly translated fakes, then a generator-side
// update on total_g, then the EMA update. Content noise is drawn in the order
// (discriminator fakes, translation, cycle).
template <class Bottleneck = WithContentBottleneck>
LossReport train_step(TrainingState& st, const TrainStepPlan& plan) {
  const TrainConfig& cfg = st.config;
  const std::int64_t step = st.step;
  const Shape code = [&] {
    Shape s = st.nets.content_encoder.code_shape();
    s.insert(s.begin(), plan.x.dim(0));
    return s;
  }();
  auto noise = [&] { return gaussian_noise(code, cfg.sigma, st.rng.content_noise()); };

  // Discriminator half-step.
  const std::uint64_t g_before = train_detail::param_digest(st.nets, true);
  Tensor<float> fake;
  if constexpr (Bottleneck::enabled) {
    const Tensor<float> n0 = noise();
    fake = train_detail::translate_batch(st.nets, plan, &n0);
  } else {
    fake = train_detail::translate_batch(st.nets, plan, nullptr);
  }
  auto dobj = discriminator_objective<float>(st.nets.discriminator, plan.x, plan.y, fake, plan.y_target, cfg.r1_gamma,
                                             cfg.lambda_adv);
  if (!std::isfinite(dobj.terms.adv_d())) throw DivergenceError(step, "non-finite discriminator loss");
  train_detail::check_finite(dobj.grads, step);
  st.optimizer.step(st.nets.discriminator.params(), dobj.grads, "discriminator",
                    AdamHyper{cfg.lr_discriminator, cfg.adam_beta1, cfg.adam_beta2});
  if (train_detail::param_digest(st.nets, true) != g_before)
    throw Error("alternation violated: discriminator update changed generator-side parameters");

  // Generator-side half-step.
  const std::uint64_t d_before = train_detail::param_digest(st.nets, false);
  GeneratorInputs in;
  in.x = plan.x;
  in.y = plan.y;
  in.y_target = plan.y_target;
  in.style_source = plan.style_source;
  in.x_ref = plan.x_ref;
  in.z = plan.z;
  if constexpr (Bottleneck::enabled) {
    in.noise_translate = noise();
    in.noise_cycle = noise();
  }
  auto gobj = generator_objective<float, Bottleneck>(st.nets, in, cfg, ObjectiveWeights::from(cfg));
  const LossReport report = total_objective(gobj.rec, gobj.adv_g, dobj.terms.adv_d(), gobj.cb, cfg, step);
  train_detail::check_finite(gobj.grads, step);
  const AdamHyper gen{cfg.lr_generator, cfg.adam_beta1, cfg.adam_beta2};
  st.optimizer.step(st.nets.content_encoder.params(), gobj.grads, "content_encoder", gen);
  st.optimizer.step(st.nets.style_encoder.params(), gobj.grads, "style_encoder", gen);
  st.optimizer.step(st.nets.generator.params(), gobj.grads, "generator", gen);
  if (plan.style_source == StyleSource::latent)
    st.optimizer.step(st.nets.mapping.params(), gobj.grads, "mapping",
                      AdamHyper{cfg.lr_mapping, cfg.adam_beta1, cfg.adam_beta2});
  if (train_detail::param_digest(st.nets, false) != d_before)
    throw Error("alternation violated: generator-side update changed discriminator parameters");

  // EMA of the generator side; discriminator entries mirror the live weights.
  const double decay = cfg.ema_decay;
  st.nets.for_each_map([&](const ParamMap& live) {
    for (const auto& [name, p] : live) {
      Tensor<float>& e = st.ema.at(name);
      if (!is_generator_side(name)) {
        e = p;
        continue;
      }
      for (std::size_t i = 0; i < p.size(); ++i)
        e[i] = static_cast<float>(decay * static_cast<double>(e[i]) + (1.0 - decay) * static_cast<double>(p[i]));
    }
  });
  ++st.step;
  return report;
}

// ---------------------------------------------------------------------------
// Run driver

struct RunOptions {
  std::optional<std::filesystem::path> resume_from;
  // Stop once this many steps are complete (simulated interruption).
  std::optional<std::int64_t> stop_at_step;
  std::function<void(std::int64_t, const LossReport&)> on_step;
};

inline std::string checkpoint_filename(std::int64_t step) { return "step_" + std::to_string(step) + ".ckpt"; }

inline std::string loss_log_header() { return "step,rec,adv_g,adv_d,cb,total_g,total_d\n"; }

inline std::string loss_log_row(std::int64_t step, const LossReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(step), r.rec,
                r.adv_g, r.adv_d, r.cb, r.total_g, r.total_d);
  return buf;
}

// Rows of a loss log with step <= `max_step`, header included.
inline std::string truncated_loss_log(const std::filesystem::path& path, std::int64_t max_step) {
  std::string out = loss_log_header();
  std::ifstream in(path);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= max_step) out += line + "\n";
  }
  return out;
}

inline std::vector<std::pair<std::int64_t, LossReport>> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loss log " + path.string());
  std::vector<std::pair<std::int64_t, LossReport>> rows;
  std::string line;
  std::getline(in, line);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) c.push_back(f);
    if (c.size() != 7) throw ParseError("", line_no, "expected 7 loss-log columns");
    rows.push_back({std::stoll(c[0]), LossReport{std::stod(c[1]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4]),
                                                 std::stod(c[5]), std::stod(c[6])}});
  }
  return rows;
}

// Fields that may differ between an interrupted run and its resumption.
inline bool resumable_with(TrainConfig a, TrainConfig b) {
  a.total_steps = b.total_steps;
  a.checkpoint_every = b.checkpoint_every;
  return a == b;
}

// Writes `config_resolved.txt`, `loss_log.csv` (one row per completed step)
// and `checkpoints/step_<N>.ckpt` every checkpoint_every steps and at the end.
// A divergence aborts the run; checkpoints already written are kept.
template <class Bottleneck = WithContentBottleneck>
Checkpoint run_training(const TrainConfig& cfg, const DatasetManifest& data, const std::filesystem::path& out_dir,
                        const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  validate(cfg);
  fs::create_directories(out_dir / "checkpoints");
  {
    std::ofstream out(out_dir / "config_resolved.txt", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (out_dir / "config_resolved.txt").string());
    out << config_to_text(cfg);
  }

  std::optional<TrainingState> st;
  std::string log_text = loss_log_header();
  if (opt.resume_from) {
    const Checkpoint c = load_checkpoint(*opt.resume_from);
    if (!resumable_with(c.config, cfg)) throw ValidationError("checkpoint config differs from the requested config");
    st.emplace(c);
    st->config = cfg;
    log_text = truncated_loss_log(out_dir / "loss_log.csv", c.step);
  } else {
    st.emplace(cfg);
  }

  const fs::path log_path = out_dir / "loss_log.csv";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());
  log << log_text;
  log.flush();

  auto save = [&] { save_checkpoint(st->to_checkpoint(), out_dir / "checkpoints" / checkpoint_filename(st->step)); };
  const std::int64_t end = opt.stop_at_step ? std::min(cfg.total_steps, *opt.stop_at_step) : cfg.total_steps;
  while (st->step < end) {
    const TrainStepPlan plan = sample_step_plan(data, cfg, st->rng, st->step);
    const LossReport r = train_step<Bottleneck>(*st, plan);
    log << loss_log_row(st->step, r);
    log.flush();
    if (opt.on_step) opt.on_step(st->step, r);
    if (st->step % cfg.checkpoint_every == 0) save();
  }
  if (st->step == 0 || st->step % cfg.checkpoint_every != 0) save();
  return st->to_checkpoint();
}

}  // namespace cbt
