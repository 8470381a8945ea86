#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "cbt/errors.hpp"

namespace cbt {

// One independent pseudo-random stream. State (engine and the normal
// distribution's cached variate) serialises to text so a resumed run continues
// the exact sequence.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t root_seed, std::string_view name) { reseed(root_seed, name); }

  void reseed(std::uint64_t root_seed, std::string_view name) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    std::seed_seq seq{static_cast<std::uint32_t>(root_seed), static_cast<std::uint32_t>(root_seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    engine_.seed(seq);
    normal_.reset();
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  int uniform_int(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine_); }
  double normal() { return normal_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() noexcept { return engine_; }

  std::string state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_ >> normal_;
    if (!is) throw IntegrityError("malformed rng stream state");
  }

  bool operator==(const RngStream& o) const { return engine_ == o.engine_ && normal_ == o.normal_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

// Named streams derived from one root seed. Consumers draw only from their
// own stream, so disabling one consumer never shifts another's sequence.
class RngStreams {
 public:
  static constexpr std::string_view kData = "data";
  static constexpr std::string_view kContentNoise = "content_noise";
  static constexpr std::string_view kLatent = "latent";
  static constexpr std::string_view kInit = "init";

  RngStreams() : RngStreams(0) {}
  explicit RngStreams(std::uint64_t seed) {
    for (auto name : {kData, kContentNoise, kLatent, kInit}) streams_.emplace(std::string(name), RngStream(seed, name));
  }

  RngStream& data() { return streams_.at(std::string(kData)); }
  RngStream& content_noise() { return streams_.at(std::string(kContentNoise)); }
  RngStream& latent() { return streams_.at(std::string(kLatent)); }
  RngStream& init() { return streams_.at(std::string(kInit)); }
  RngStream& get(const std::string& name) { return streams_.at(name); }

  // "name state\n" per stream, sorted by name.
  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [name, s] : streams_) os << name << ' ' << s.state() << '\n';
    return os.str();
  }
  static RngStreams deserialize(const std::string& text) {
    RngStreams out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw IntegrityError("malformed rng state line");
      const std::string name = line.substr(0, sp);
      auto it = out.streams_.find(name);
      if (it == out.streams_.end()) throw IntegrityError("unknown rng stream '" + name + "'");
      it->second.set_state(line.substr(sp + 1));
    }
    return out;
  }

  bool operator==(const RngStreams& o) const { return streams_ == o.streams_; }

 private:
  std::map<std::string, RngStream> streams_;
};

}  // namespace cbt
