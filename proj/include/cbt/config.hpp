#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cbt/errors.hpp"

namespace cbt {

// All hyperparameters of a run. Defaults give the desk-scale setup with the
// published objective weights (sigma = 1, lambda_adv = 1, lambda_cb = 1e-4).
struct TrainConfig {
  // Objective
  double sigma = 1.0;
  double lambda_adv = 1.0;
  double lambda_cb = 1e-4;
  double r1_gamma = 1.0;

  // Model
  std::int64_t num_domains = 2;
  std::int64_t style_dim = 16;
  std::int64_t latent_dim = 16;
  std::int64_t content_channels = 8;
  std::int64_t image_size = 32;
  std::int64_t base_channels = 16;
  std::int64_t max_channels = 64;
  std::int64_t content_downsamples = 2;
  std::int64_t mapping_hidden = 64;

  // Optimisation
  double lr_generator = 1e-4;
  double lr_discriminator = 1e-4;
  double lr_mapping = 1e-6;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  std::int64_t batch_size = 8;
  std::int64_t total_steps = 2000;
  double ema_decay = 0.999;
  std::int64_t seed = 0;

  // Run plumbing
  std::int64_t checkpoint_every = 500;
  bool flip_augment = false;

  bool operator==(const TrainConfig&) const = default;
};

namespace config_detail {

using Member = std::variant<double TrainConfig::*, std::int64_t TrainConfig::*, bool TrainConfig::*>;

struct Field {
  std::string_view name;
  Member member;
};

inline constexpr std::array kFields{
    Field{"sigma", &TrainConfig::sigma},
    Field{"lambda_adv", &TrainConfig::lambda_adv},
    Field{"lambda_cb", &TrainConfig::lambda_cb},
    Field{"r1_gamma", &TrainConfig::r1_gamma},
    Field{"num_domains", &TrainConfig::num_domains},
    Field{"style_dim", &TrainConfig::style_dim},
    Field{"latent_dim", &TrainConfig::latent_dim},
    Field{"content_channels", &TrainConfig::content_channels},
    Field{"image_size", &TrainConfig::image_size},
    Field{"base_channels", &TrainConfig::base_channels},
    Field{"max_channels", &TrainConfig::max_channels},
    Field{"content_downsamples", &TrainConfig::content_downsamples},
    Field{"mapping_hidden", &TrainConfig::mapping_hidden},
    Field{"lr_generator", &TrainConfig::lr_generator},
    Field{"lr_discriminator", &TrainConfig::lr_discriminator},
    Field{"lr_mapping", &TrainConfig::lr_mapping},
    Field{"adam_beta1", &TrainConfig::adam_beta1},
    Field{"adam_beta2", &TrainConfig::adam_beta2},
    Field{"batch_size", &TrainConfig::batch_size},
    Field{"total_steps", &TrainConfig::total_steps},
    Field{"ema_decay", &TrainConfig::ema_decay},
    Field{"seed", &TrainConfig::seed},
    Field{"checkpoint_every", &TrainConfig::checkpoint_every},
    Field{"flip_augment", &TrainConfig::flip_augment},
};

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline const Field* find_field(std::string_view key) {
  for (const auto& f : kFields)
    if (f.name == key) return &f;
  return nullptr;
}

// Throws std::invalid_argument with a short reason on bad input.
inline void assign(TrainConfig& cfg, const Field& f, std::string_view text) {
  std::visit(
      [&](auto member) {
        using V = std::remove_reference_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<V, bool>) {
          if (text == "true" || text == "1") cfg.*member = true;
          else if (text == "false" || text == "0") cfg.*member = false;
          else throw std::invalid_argument("expected true/false");
        } else {
          V v{};
          const char* end = text.data() + text.size();
          std::from_chars_result r{};
          if constexpr (std::is_same_v<V, double>) r = std::from_chars(text.data(), end, v, std::chars_format::general);
          else r = std::from_chars(text.data(), end, v);
          if (r.ec != std::errc() || r.ptr != end)
            throw std::invalid_argument(std::is_same_v<V, double> ? "expected a real number" : "expected an integer");
          cfg.*member = v;
        }
      },
      f.member);
}

inline std::string format_value(const TrainConfig& cfg, const Field& f) {
  return std::visit(
      [&](auto member) -> std::string {
        using V = std::remove_cvref_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<V, bool>) {
          return cfg.*member ? "true" : "false";
        } else if constexpr (std::is_same_v<V, double>) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.17g", cfg.*member);
          return buf;
        } else {
          return std::to_string(cfg.*member);
        }
      },
      f.member);
}

}  // namespace config_detail

inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw ValidationError("invalid config: " + m); };
  if (!(c.sigma > 0) || !std::isfinite(c.sigma)) fail("sigma must be positive");
  if (!(c.lambda_adv >= 0)) fail("lambda_adv must be nonnegative");
  if (!(c.lambda_cb >= 0)) fail("lambda_cb must be nonnegative");
  if (!(c.r1_gamma >= 0)) fail("r1_gamma must be nonnegative");
  if (c.num_domains < 2) fail("num_domains must be at least 2");
  if (c.style_dim < 1 || c.latent_dim < 1 || c.content_channels < 1) fail("code dimensions must be positive");
  if (c.base_channels < 1 || c.max_channels < c.base_channels) fail("channel widths must satisfy 1 <= base <= max");
  if (c.mapping_hidden < 1) fail("mapping_hidden must be positive");
  if (c.content_downsamples < 1) fail("content_downsamples must be at least 1");
  if (c.image_size < 8 || (c.image_size & (c.image_size - 1)) != 0) fail("image_size must be a power of two >= 8");
  if ((c.image_size >> c.content_downsamples) < 2) fail("image_size too small for content_downsamples");
  if (!(c.lr_generator > 0) || !(c.lr_discriminator > 0) || !(c.lr_mapping > 0)) fail("learning rates must be positive");
  if (!(c.adam_beta1 >= 0 && c.adam_beta1 < 1) || !(c.adam_beta2 >= 0 && c.adam_beta2 < 1))
    fail("adam betas must lie in [0, 1)");
  if (c.batch_size < 1) fail("batch_size must be positive");
  if (c.total_steps < 0) fail("total_steps must be nonnegative");
  if (!(c.ema_decay >= 0 && c.ema_decay < 1)) fail("ema_decay must lie in [0, 1)");
  if (c.seed < 0) fail("seed must be nonnegative");
  if (c.checkpoint_every < 1) fail("checkpoint_every must be positive");
}

// Overrides one field from text; used by both the file parser and `--set`.
inline void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value, int line = 0) {
  const auto* f = config_detail::find_field(key);
  if (f == nullptr) throw ParseError(std::string(key), line, "unknown key");
  try {
    config_detail::assign(cfg, *f, value);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string(key), line, std::string(e.what()) + ", got '" + std::string(value) + "'");
  }
}

// `key = value` lines; '#' starts a comment. Unspecified keys keep defaults.
inline TrainConfig parse_config(std::string_view text, TrainConfig cfg = {}) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("", line_no, "expected 'key = value'");
    const auto key = config_detail::trim(line.substr(0, eq));
    const auto value = config_detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("", line_no, "missing key");
    set_config_value(cfg, key, value, line_no);
  }
  validate(cfg);
  return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Every field, one `key = value` line each, in declaration order. Round-trips
// exactly through parse_config.
inline std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : config_detail::kFields) {
    out += f.name;
    out += " = ";
    out += config_detail::format_value(cfg, f);
    out += '\n';
  }
  return out;
}

inline std::vector<std::string_view> config_keys() {
  std::vector<std::string_view> keys;
  for (const auto& f : config_detail::kFields) keys.push_back(f.name);
  return keys;
}

}  // namespace cbt
