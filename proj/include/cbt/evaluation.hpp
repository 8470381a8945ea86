#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cbt/checkpoint.hpp"
#include "cbt/data.hpp"
#include "cbt/layers.hpp"
#include "cbt/networks.hpp"
#include "cbt/rng.hpp"

namespace cbt {

// ---------------------------------------------------------------------------
// Feature extractors

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual bool deterministic() const { return true; }
  // Per-layer feature maps, each [C, H, W].
  virtual std::vector<Tensor<float>> layers(const Image& img) const = 0;

  // Spatially averaged layers, concatenated; the FID feature vector.
  std::vector<double> vector(const Image& img) const {
    std::vector<double> out;
    for (const auto& l : layers(img)) {
      const int c = l.dim(0);
      const std::size_t hw = l.size() / static_cast<std::size_t>(c);
      for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (std::size_t p = 0; p < hw; ++p) s += l[static_cast<std::size_t>(ch) * hw + p];
        out.push_back(s / static_cast<double>(hw));
      }
    }
    return out;
  }
};

// Fixed, seeded, randomly initialised conv stack: three conv3x3 + leaky ReLU
// stages with 2x average pooling between them.
class RandomConvExtractor : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 0, std::vector<int> widths = {16, 32, 64})
      : seed_(seed), widths_(std::move(widths)) {
    RngStream rng(seed, "feature_extractor");
    int cin = 3;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      layers::add_conv(params_, rng, "stage" + std::to_string(i), cin, widths_[i], 3);
      cin = widths_[i];
    }
  }

  std::string name() const override { return "random_conv(seed=" + std::to_string(seed_) + ")"; }

  std::vector<Tensor<float>> layers(const Image& img) const override {
    Graph<float> g(false);
    Var h = g.constant(net_detail::as_batch(img));
    std::vector<Tensor<float>> out;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      if (i > 0) h = ops::avg_pool2(g, h);
      h = ops::leaky_relu(g, layers::conv(g, params_, "stage" + std::to_string(i), h, 1));
      out.push_back(net_detail::drop_batch(g.value(h)));
    }
    return out;
  }

 private:
  std::uint64_t seed_;
  std::vector<int> widths_;
  ParamMap params_;
};

// Pixels average-pooled to 4x4 as the single layer.
class PixelExtractor : public FeatureExtractor {
 public:
  std::string name() const override { return "pixels"; }
  std::vector<Tensor<float>> layers(const Image& img) const override {
    Graph<float> g(false);
    Var h = g.constant(net_detail::as_batch(img));
    while (g.value(h).dim(2) > 4) h = ops::avg_pool2(g, h);
    return {net_detail::drop_batch(g.value(h))};
  }
};

inline std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, std::uint64_t seed = 0) {
  if (name == "random_conv") return std::make_unique<RandomConvExtractor>(seed);
  if (name == "pixels") return std::make_unique<PixelExtractor>();
  throw ValidationError("unknown feature extractor '" + name + "' (expected random_conv or pixels)");
}

// ---------------------------------------------------------------------------
// Perceptual distance and diversity

namespace eval_detail {

// Channel-unit-normalised layers.
inline std::vector<Tensor<float>> normalized_layers(const FeatureExtractor& fx, const Image& img) {
  auto ls = fx.layers(img);
  for (auto& l : ls) {
    const int c = l.dim(0);
    const std::size_t hw = l.size() / static_cast<std::size_t>(c);
    for (std::size_t p = 0; p < hw; ++p) {
      double n = 0;
      for (int ch = 0; ch < c; ++ch) n += static_cast<double>(l[ch * hw + p]) * l[ch * hw + p];
      const double inv = 1.0 / (std::sqrt(n) + 1e-10);
      for (int ch = 0; ch < c; ++ch) l[ch * hw + p] = static_cast<float>(l[ch * hw + p] * inv);
    }
  }
  return ls;
}

inline double normalized_distance(const std::vector<Tensor<float>>& a, const std::vector<Tensor<float>>& b) {
  if (a.size() != b.size()) throw DimensionError("feature stacks have different depths");
  double total = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].shape() != b[k].shape()) throw DimensionError("feature layers have different shapes");
    const int c = a[k].dim(0);
    const std::size_t hw = a[k].size() / static_cast<std::size_t>(c);
    double s = 0;
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      const double d = static_cast<double>(a[k][i]) - b[k][i];
      s += d * d;
    }
    total += s / static_cast<double>(hw);
  }
  return total;
}

// Order-independent sum: terms are sorted before accumulation.
inline double stable_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  return s;
}

}  // namespace eval_detail

// Sum over layers of the spatial mean of squared differences between
// channel-normalised features.
inline double perceptual_distance(const Image& a, const Image& b, const FeatureExtractor& fx) {
  return eval_detail::normalized_distance(eval_detail::normalized_layers(fx, a), eval_detail::normalized_layers(fx, b));
}

// Mean perceptual distance over all unordered pairs.
inline double lpips_diversity(std::span<const Image> translations, const FeatureExtractor& fx) {
  if (translations.size() < 2) throw ArityError("lpips_diversity needs at least 2 translations");
  std::vector<std::vector<Tensor<float>>> feats;
  for (const auto& t : translations) feats.push_back(eval_detail::normalized_layers(fx, t));
  std::vector<double> d;
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t j = i + 1; j < feats.size(); ++j) d.push_back(eval_detail::normalized_distance(feats[i], feats[j]));
  const double n = static_cast<double>(d.size());
  return eval_detail::stable_sum(std::move(d)) / n;
}

// ---------------------------------------------------------------------------
// FID

using FeatureMatrix = Eigen::MatrixXd;  // one sample per row

struct FidOptions {
  bool shrinkage = true;  // ridge 1e-6 I when rows < 10 * dim
};

namespace eval_detail {

inline Eigen::MatrixXd covariance(const FeatureMatrix& f, const Eigen::RowVectorXd& mu) {
  const Eigen::MatrixXd c = f.rowwise() - mu;
  return (c.transpose() * c) / static_cast<double>(f.rows());
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-6) throw NumericalError("covariance has a negative eigenvalue " + std::to_string(ev[i]));
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace eval_detail

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}); the trace of the
// product root is taken from the symmetric S_a^{1/2} S_b S_a^{1/2}.
// Covariances use the 1/n (maximum-likelihood) normalisation.
inline double fid(const FeatureMatrix& a, const FeatureMatrix& b, const FidOptions& opt = {}) {
  if (a.cols() != b.cols()) throw DimensionError("fid: feature dimensions differ");
  if (a.rows() < 2 || b.rows() < 2) throw ArityError("fid needs at least 2 samples per side");
  const Eigen::Index dim = a.cols();
  const Eigen::RowVectorXd ma = a.colwise().mean(), mb = b.colwise().mean();
  Eigen::MatrixXd sa = eval_detail::covariance(a, ma), sb = eval_detail::covariance(b, mb);
  const auto ridge = Eigen::MatrixXd::Identity(dim, dim) * 1e-6;
  if (opt.shrinkage && a.rows() < 10 * dim) sa += ridge;
  if (opt.shrinkage && b.rows() < 10 * dim) sb += ridge;
  if (!opt.shrinkage) {
    for (const auto* s : {&sa, &sb}) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*s, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, s->trace()))
        throw NumericalError("degenerate covariance; enable shrinkage or add samples");
    }
  }
  const Eigen::MatrixXd ra = eval_detail::psd_sqrt(sa);
  const Eigen::MatrixXd m = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  double tr_root = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev < -1e-6) throw NumericalError("covariance product has a negative eigenvalue " + std::to_string(ev));
    tr_root += std::sqrt(std::max(ev, 0.0));
  }
  const double v = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
  return std::max(v, 0.0);
}

inline FeatureMatrix feature_matrix(std::span<const Image> images, const FeatureExtractor& fx) {
  if (images.empty()) return FeatureMatrix(0, 0);
  std::vector<std::vector<double>> rows;
  for (const auto& img : images) rows.push_back(fx.vector(img));
  FeatureMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

// ---------------------------------------------------------------------------
// Translation

// Loads the EMA weights of a checkpoint into a fresh set of networks.
inline Networks ema_networks(const Checkpoint& c) {
  Networks n(c.config);
  n.load_params(c.ema_parameters);
  return n;
}

inline Image translate_reference(const Networks& nets, const Image& x, const Image& x_ref, DomainLabel y_target) {
  DomainLabel::checked(y_target.index, nets.generator.config().num_domains);
  return generate(nets.generator, encode_content(nets.content_encoder, x), encode_style(nets.style_encoder, x_ref, y_target));
}

inline Image translate_sampling(const Networks& nets, const Image& x, DomainLabel y_target, const LatentCode& z) {
  DomainLabel::checked(y_target.index, nets.generator.config().num_domains);
  return generate(nets.generator, encode_content(nets.content_encoder, x), map_latent(nets.mapping, z, y_target));
}

// What run_evaluation needs from a model; lets tests substitute stubs.
class Translator {
 public:
  virtual ~Translator() = default;
  virtual Image reference(const Image& x, const Image& x_ref, DomainLabel y_target) const = 0;
  virtual Image sampling(const Image& x, DomainLabel y_target, const LatentCode& z) const = 0;
  virtual int latent_dim() const = 0;
  virtual ContentCode content(const Image& x) const = 0;
};

class NetworkTranslator : public Translator {
 public:
  explicit NetworkTranslator(Networks nets) : nets_(std::move(nets)) {}
  explicit NetworkTranslator(const Checkpoint& c) : nets_(ema_networks(c)) {}

  Image reference(const Image& x, const Image& x_ref, DomainLabel y) const override {
    return translate_reference(nets_, x, x_ref, y);
  }
  Image sampling(const Image& x, DomainLabel y, const LatentCode& z) const override {
    return translate_sampling(nets_, x, y, z);
  }
  int latent_dim() const override { return static_cast<int>(nets_.mapping.config().latent_dim); }
  ContentCode content(const Image& x) const override { return encode_content(nets_.content_encoder, x); }
  const Networks& networks() const noexcept { return nets_; }

 private:
  Networks nets_;
};

inline LatentCode sample_latent(int dim, RngStream& rng) {
  Tensor<float> z(Shape{dim});
  for (auto& v : z.vec()) v = static_cast<float>(rng.normal());
  return LatentCode{std::move(z)};
}

// ---------------------------------------------------------------------------
// Content-leakage probe

struct ProbeConfig {
  int iterations = 500;
  double learning_rate = 0.5;
  double l2 = 1e-3;
};

struct ProbeResult {
  double accuracy = 0;
  double chance = 0;
};

// Softmax regression by full-batch gradient descent on standardised features
// (statistics from the training rows). Deterministic.
inline ProbeResult probe_accuracy(const FeatureMatrix& train, std::span<const int> train_y, const FeatureMatrix& test,
                                  std::span<const int> test_y, int num_classes, const ProbeConfig& cfg = {}) {
  if (num_classes < 2) throw ValidationError("leakage probe needs at least 2 domains");
  if (train.rows() == 0 || test.rows() == 0) throw ValidationError("leakage probe needs nonempty train and test sets");
  if (train.cols() != test.cols()) throw DimensionError("probe feature dimensions differ");
  if (static_cast<Eigen::Index>(train_y.size()) != train.rows() || static_cast<Eigen::Index>(test_y.size()) != test.rows())
    throw DimensionError("probe label count differs from feature rows");
  const Eigen::RowVectorXd mu = train.colwise().mean();
  Eigen::RowVectorXd sd = ((train.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd[j] = sd[j] > 1e-12 ? sd[j] : 1.0;
  auto standardize = [&](const FeatureMatrix& f) -> Eigen::MatrixXd {
    return ((f.rowwise() - mu).array().rowwise() / sd.array()).matrix();
  };
  const Eigen::MatrixXd xtr = standardize(train), xte = standardize(test);
  const Eigen::Index n = xtr.rows(), d = xtr.cols(), k = num_classes;
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) y(i, DomainLabel::checked(train_y[static_cast<std::size_t>(i)], k).index) = 1.0;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, k);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);
  auto softmax = [](Eigen::MatrixXd logits) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      logits.row(i).array() -= logits.row(i).maxCoeff();
      logits.row(i) = logits.row(i).array().exp().matrix();
      logits.row(i) /= logits.row(i).sum();
    }
    return logits;
  };
  for (int it = 0; it < cfg.iterations; ++it) {
    const Eigen::MatrixXd p = softmax((xtr * w).rowwise() + b);
    const Eigen::MatrixXd e = (p - y) / static_cast<double>(n);
    w -= cfg.learning_rate * (xtr.transpose() * e + cfg.l2 * w);
    b -= cfg.learning_rate * e.colwise().sum();
  }
  const Eigen::MatrixXd logits = (xte * w).rowwise() + b;
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    correct += static_cast<int>(arg) == test_y[static_cast<std::size_t>(i)];
  }
  return ProbeResult{static_cast<double>(correct) / static_cast<double>(logits.rows()), 1.0 / static_cast<double>(k)};
}

// Test accuracy of a linear domain classifier on flattened mean content codes.
inline ProbeResult leakage_probe(const Translator& model, const DatasetManifest& m, int image_size,
                                 const ProbeConfig& cfg = {}) {
  if (m.num_domains() < 2) throw ValidationError("leakage probe needs a manifest with at least 2 domains");
  auto codes = [&](Split split, std::vector<int>& labels) {
    std::vector<std::vector<float>> rows;
    for (int i : m.indices(split)) {
      const auto& e = m.entries[static_cast<std::size_t>(i)];
      rows.push_back(model.content(load_image(m.root / e.path, image_size)).values.vec());
      labels.push_back(e.label.index);
    }
    if (rows.empty()) throw ValidationError("leakage probe needs nonempty train and test splits");
    FeatureMatrix f(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < rows[r].size(); ++c) f(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return f;
  };
  std::vector<int> ytr, yte;
  const FeatureMatrix tr = codes(Split::train, ytr);
  const FeatureMatrix te = codes(Split::test, yte);
  return probe_accuracy(tr, ytr, te, yte, m.num_domains(), cfg);
}

// ---------------------------------------------------------------------------
// Evaluation sweep

enum class Strategy { reference, sampling };

inline const char* strategy_name(Strategy s) { return s == Strategy::reference ? "reference" : "sampling"; }

struct MetricsCell {
  int source = 0;
  int target = 0;
  Strategy strategy = Strategy::reference;
  std::optional<double> lpips_diversity;  // absent when num_repeats < 2
  double fid = 0;
  int num_inputs = 0;
};

struct MetricsReport {
  std::vector<std::string> domains;
  std::vector<MetricsCell> cells;
  std::optional<ProbeResult> leakage;
  std::string checkpoint_id;
  std::string extractor;
  std::uint64_t seed = 0;
  int num_repeats = 0;

  const MetricsCell* find(int source, int target, Strategy s) const {
    for (const auto& c : cells)
      if (c.source == source && c.target == target && c.strategy == s) return &c;
    return nullptr;
  }
};

struct EvalConfig {
  int num_repeats = 10;
  std::uint64_t seed = 0;
  int image_size = 32;
  int max_inputs_per_domain = 0;  // 0 = every test image
  bool include_same_domain = false;
};

// For each ordered domain pair and strategy: num_repeats translations of each
// source test image (references drawn from the target's test split, latents
// from N(0, I)); LPIPS diversity averaged over inputs; FID of all
// translations against the target's real test images. Each cell draws from
// its own named stream, so cells are independent of evaluation order.
inline MetricsReport run_evaluation(const Translator& model, const DatasetManifest& m, const EvalConfig& cfg,
                                    const FeatureExtractor& fx) {
  if (cfg.num_repeats < 1) throw ValidationError("num_repeats must be positive");
  MetricsReport rep;
  rep.domains = m.domains;
  rep.extractor = fx.name();
  rep.seed = cfg.seed;
  rep.num_repeats = cfg.num_repeats;
  const int k = m.num_domains();
  std::vector<std::vector<Image>> test(static_cast<std::size_t>(k));
  for (int d = 0; d < k; ++d) {
    for (int i : m.indices(Split::test, d)) test[d].push_back(load_image(m.root / m.entries[static_cast<std::size_t>(i)].path, cfg.image_size));
    if (test[d].empty()) throw ValidationError("domain '" + m.domains[d] + "' has no test images");
  }
  std::vector<FeatureMatrix> real(static_cast<std::size_t>(k));
  for (int d = 0; d < k; ++d) real[d] = feature_matrix(test[d], fx);

  for (int s = 0; s < k; ++s)
    for (int t = 0; t < k; ++t) {
      if (s == t && !cfg.include_same_domain) continue;
      for (Strategy strat : {Strategy::reference, Strategy::sampling}) {
        RngStream rng(cfg.seed, "eval/" + std::to_string(s) + "/" + std::to_string(t) + "/" + strategy_name(strat));
        const std::size_t n_in = cfg.max_inputs_per_domain > 0
                                     ? std::min<std::size_t>(test[s].size(), static_cast<std::size_t>(cfg.max_inputs_per_domain))
                                     : test[s].size();
        std::vector<Image> all;
        std::vector<double> div;
        for (std::size_t i = 0; i < n_in; ++i) {
          std::vector<Image> outs;
          for (int r = 0; r < cfg.num_repeats; ++r) {
            if (strat == Strategy::reference) {
              const auto& ref = test[t][static_cast<std::size_t>(rng.uniform_int(static_cast<int>(test[t].size())))];
              outs.push_back(model.reference(test[s][i], ref, DomainLabel{t}));
            } else {
              outs.push_back(model.sampling(test[s][i], DomainLabel{t}, sample_latent(model.latent_dim(), rng)));
            }
          }
          if (cfg.num_repeats >= 2) div.push_back(lpips_diversity(outs, fx));
          all.insert(all.end(), outs.begin(), outs.end());
        }
        MetricsCell cell{s, t, strat, std::nullopt, 0.0, static_cast<int>(n_in)};
        if (!div.empty()) cell.lpips_diversity = eval_detail::stable_sum(div) / static_cast<double>(div.size());
        cell.fid = fid(feature_matrix(all, fx), real[t]);
        rep.cells.push_back(cell);
      }
    }
  return rep;
}

// One JSON object per line: a header record, one record per cell, and the
// leakage record when present.
inline std::string metrics_to_jsonl(const MetricsReport& r) {
  using nlohmann::json;
  std::string out;
  out += json{{"record", "header"},
              {"checkpoint", r.checkpoint_id},
              {"extractor", r.extractor},
              {"seed", r.seed},
              {"num_repeats", r.num_repeats},
              {"domains", r.domains}}
             .dump() +
         "\n";
  for (const auto& c : r.cells) {
    json j{{"record", "cell"},
           {"source", r.domains.at(static_cast<std::size_t>(c.source))},
           {"target", r.domains.at(static_cast<std::size_t>(c.target))},
           {"strategy", strategy_name(c.strategy)},
           {"fid", c.fid},
           {"num_inputs", c.num_inputs}};
    j["lpips_diversity"] = c.lpips_diversity ? json(*c.lpips_diversity) : json(nullptr);
    out += j.dump() + "\n";
  }
  if (r.leakage)
    out += json{{"record", "leakage"}, {"accuracy", r.leakage->accuracy}, {"chance", r.leakage->chance}}.dump() + "\n";
  return out;
}

// Rows are domain pairs; columns LPIPS (higher is better) and FID (lower is
// better) for each strategy.
inline std::string metrics_table(const MetricsReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-32s | %-21s | %-21s\n", "", "Reference-guided", "Latent-guided");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-32s | %9s %11s | %9s %11s\n", "source -> target", "LPIPS^", "FIDv", "LPIPS^", "FIDv");
  out += buf;
  out += std::string(80, '-') + "\n";
  const int k = static_cast<int>(r.domains.size());
  auto fmt = [](const MetricsCell* c, bool lpips) -> std::string {
    char b[32];
    if (c == nullptr) return "-";
    if (lpips) {
      if (!c->lpips_diversity) return "n/a";
      std::snprintf(b, sizeof b, "%.4f", *c->lpips_diversity);
    } else {
      std::snprintf(b, sizeof b, "%.3f", c->fid);
    }
    return b;
  };
  for (int s = 0; s < k; ++s)
    for (int t = 0; t < k; ++t) {
      const auto* ref = r.find(s, t, Strategy::reference);
      const auto* smp = r.find(s, t, Strategy::sampling);
      if (ref == nullptr && smp == nullptr) continue;
      const std::string pair = r.domains[s] + " -> " + r.domains[t];
      std::snprintf(buf, sizeof buf, "%-32s | %9s %11s | %9s %11s\n", pair.c_str(), fmt(ref, true).c_str(),
                    fmt(ref, false).c_str(), fmt(smp, true).c_str(), fmt(smp, false).c_str());
      out += buf;
    }
  if (r.leakage) {
    std::snprintf(buf, sizeof buf, "content leakage probe accuracy: %.4f (chance %.4f)\n", r.leakage->accuracy,
                  r.leakage->chance);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Style-transfer check on synthetic data

struct TransferCheck {
  int pairs = 0;
  int passed = 0;
  double median_hue_error = 0;
  double median_centroid_error = 0;
  double pass_rate() const { return pairs == 0 ? 0.0 : static_cast<double>(passed) / pairs; }
};

// Reference-guided translation of test images using same-domain test
// references whose measured hue differs from the source's by more than
// `min_hue_gap`. A pair passes when the output hue is within `hue_tol` of
// the reference and the output centroid within `centroid_tol` px of the
// source. Outputs without foreground fail.
inline TransferCheck style_transfer_check(const Translator& model, const DatasetManifest& m, int image_size, int num_pairs,
                                          std::uint64_t seed, double hue_tol = 0.1, double centroid_tol = 3.0,
                                          double min_hue_gap = 0.3) {
  RngStream rng(seed, "transfer_check");
  std::vector<std::vector<std::pair<Image, ForegroundStats>>> pool(static_cast<std::size_t>(m.num_domains()));
  for (int d = 0; d < m.num_domains(); ++d)
    for (int i : m.indices(Split::test, d)) {
      Image img = load_image(m.root / m.entries[static_cast<std::size_t>(i)].path, image_size);
      auto st = foreground_stats(img);
      pool[d].emplace_back(std::move(img), st);
    }
  TransferCheck out;
  std::vector<double> hue_err, cen_err;
  for (int p = 0; p < num_pairs; ++p) {
    const int d = rng.uniform_int(m.num_domains());
    const auto& dom = pool[d];
    if (dom.size() < 2) throw ValidationError("transfer check needs at least 2 test images per domain");
    const auto& src = dom[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(dom.size())))];
    std::vector<std::size_t> cands;
    for (std::size_t j = 0; j < dom.size(); ++j)
      if (hue_distance(dom[j].second.hue, src.second.hue) > min_hue_gap) cands.push_back(j);
    if (cands.empty()) continue;
    const auto& ref = dom[cands[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cands.size())))]];
    const Image outimg = model.reference(src.first, ref.first, DomainLabel{d});
    const auto os = foreground_stats(outimg);
    ++out.pairs;
    if (os.count == 0) {
      hue_err.push_back(0.5);
      cen_err.push_back(static_cast<double>(image_size));
      continue;
    }
    const double he = hue_distance(os.hue, ref.second.hue);
    const double ce = std::hypot(os.centroid_x - src.second.centroid_x, os.centroid_y - src.second.centroid_y);
    hue_err.push_back(he);
    cen_err.push_back(ce);
    out.passed += (he <= hue_tol && ce <= centroid_tol) ? 1 : 0;
  }
  auto median = [](std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  out.median_hue_error = median(hue_err);
  out.median_centroid_error = median(cen_err);
  return out;
}

// ---------------------------------------------------------------------------
// Comparison grid

// Layout: top-left blank, first row the content images, first column the
// style references; cell (r, c) translates content c with reference r.
inline Image translation_grid(const Translator& model, std::span<const Image> contents, std::span<const Image> styles,
                              std::span<const int> style_labels) {
  if (contents.empty() || styles.empty()) throw ValidationError("grid needs at least one content and one style image");
  if (styles.size() != style_labels.size()) throw DimensionError("one label per style image is required");
  const int s = contents[0].height();
  const int cols = static_cast<int>(contents.size()) + 1, rows = static_cast<int>(styles.size()) + 1;
  Tensor<float> t(Shape{3, rows * s, cols * s}, -1.0f);
  const int width = cols * s;
  const std::size_t plane = static_cast<std::size_t>(rows) * s * width;
  auto blit = [&](const Image& img, int r, int c) {
    if (img.height() != s || img.width() != s || img.channels() != 3) throw DimensionError("grid images must share one size");
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          t[ch * plane + static_cast<std::size_t>(r * s + y) * width + c * s + x] =
              img.pixels()[(static_cast<std::size_t>(ch) * s + y) * s + x];
  };
  for (std::size_t c = 0; c < contents.size(); ++c) blit(contents[c], 0, static_cast<int>(c) + 1);
  for (std::size_t r = 0; r < styles.size(); ++r) {
    blit(styles[r], static_cast<int>(r) + 1, 0);
    for (std::size_t c = 0; c < contents.size(); ++c)
      blit(model.reference(contents[c], styles[r], DomainLabel{style_labels[r]}), static_cast<int>(r) + 1,
           static_cast<int>(c) + 1);
  }
  return Image(std::move(t));
}

}  // namespace cbt
