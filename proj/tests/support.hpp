#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "cbt/config.hpp"
#include "cbt/networks.hpp"
#include "cbt/rng.hpp"

namespace cbt::test {

namespace fs = std::filesystem;

// Smallest architecture the config validator admits; well under 10^4 parameters.
inline TrainConfig toy_config(int num_domains = 2) {
  TrainConfig c;
  c.num_domains = num_domains;
  c.image_size = 8;
  c.base_channels = 2;
  c.max_channels = 4;
  c.style_dim = 3;
  c.latent_dim = 3;
  c.content_channels = 2;
  c.content_downsamples = 1;
  c.mapping_hidden = 4;
  c.batch_size = 2;
  c.total_steps = 4;
  c.checkpoint_every = 2;
  c.ema_decay = 0.9;
  return c;
}

inline Networks make_networks(const TrainConfig& cfg, std::uint64_t seed) {
  Networks nets(cfg);
  RngStream rng(seed, "test_init");
  nets.init(rng);
  return nets;
}

inline std::size_t count_params(const ParamMap& p) {
  std::size_t n = 0;
  for (const auto& [_, t] : p) n += t.size();
  return n;
}

// Uniform values in [lo, hi] with the given shape.
inline Tensor<float> random_tensor(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(shape);
  for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline Tensor<float> normal_tensor(const Shape& shape, RngStream& rng, double sigma = 1.0) {
  Tensor<float> t(shape);
  for (auto& v : t.vec()) v = static_cast<float>(sigma * rng.normal());
  return t;
}

inline std::map<std::string, Tensor<double>> to_double(const ParamMap& p) {
  std::map<std::string, Tensor<double>> out;
  for (const auto& [name, t] : p) out.emplace(name, tensor_cast<double>(t));
  return out;
}

// |a - b| / max(|a|, |b|), with an absolute floor so exact zeros compare cleanly.
inline double rel_error(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheck {
  double worst = 0;
  std::string worst_name;
  double worst_analytic = 0, worst_fd = 0, value = 0;
  int checked = 0;
};

// Compares analytic gradients against central differences on `samples`
// randomly chosen coordinates of the parameters named in `analytic`. The
// relative-error floor is 1e4 ulp(f) / h: a central difference carries a few
// ulp(f) / h of rounding noise, and exactly-zero gradients see only that.
inline GradCheck finite_difference_check(std::map<std::string, Tensor<double>> params,
                                         const std::map<std::string, Tensor<double>>& analytic,
                                         const std::function<double(const std::map<std::string, Tensor<double>>&)>& f,
                                         RngStream& rng, int samples, double h = 1e-5) {
  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto& [name, t] : analytic)
    for (std::size_t i = 0; i < t.size(); ++i) coords.emplace_back(name, i);
  GradCheck out;
  out.value = f(params);
  const double mag = std::abs(out.value);
  const double floor = std::max(1e-7, 1e4 * (std::nextafter(mag, INFINITY) - mag) / h);
  for (int s = 0; s < samples && !coords.empty(); ++s) {
    const auto& [name, i] = coords[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(coords.size())))];
    double& p = params.at(name)[i];
    const double p0 = p;
    p = p0 + h;
    const double up = f(params);
    p = p0 - h;
    const double down = f(params);
    p = p0;
    const double fd = (up - down) / (2 * h);
    const double e = rel_error(analytic.at(name)[i], fd, floor);
    if (e > out.worst) {
      out.worst = e;
      out.worst_name = name + "[" + std::to_string(i) + "]";
      out.worst_analytic = analytic.at(name)[i];
      out.worst_fd = fd;
    }
    ++out.checked;
  }
  return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("cbt_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

}  // namespace cbt::test
