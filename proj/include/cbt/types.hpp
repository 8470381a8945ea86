#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cbt/errors.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

// [C, H, W] pixel grid in the canonical range [-1, 1], C in {1, 3}.
class Image {
 public:
  Image() = default;
  explicit Image(Tensor<float> pixels) : pixels_(std::move(pixels)) { validate(); }

  const Tensor<float>& pixels() const noexcept { return pixels_; }
  int channels() const { return pixels_.dim(0); }
  int height() const { return pixels_.dim(1); }
  int width() const { return pixels_.dim(2); }

  bool operator==(const Image&) const = default;

 private:
  void validate() const {
    if (pixels_.rank() != 3) throw DimensionError("image must be [C, H, W], got " + shape_str(pixels_.shape()));
    if (pixels_.dim(0) != 1 && pixels_.dim(0) != 3)
      throw DimensionError("image must have 1 or 3 channels, got " + std::to_string(pixels_.dim(0)));
    for (float v : pixels_.vec())
      if (!std::isfinite(v) || v < -1.0f || v > 1.0f)
        throw ValidationError("image pixel outside [-1, 1] or not finite: " + std::to_string(v));
  }

  Tensor<float> pixels_;
};

inline float normalize_pixel(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

inline std::uint8_t denormalize_pixel(float v) {
  const float x = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(x);
}

struct DomainLabel {
  int index = 0;

  static DomainLabel checked(int index, std::int64_t num_domains) {
    if (index < 0 || index >= num_domains)
      throw IndexError("domain label " + std::to_string(index) + " out of range [0, " + std::to_string(num_domains) + ")");
    return DomainLabel{index};
  }
  bool operator==(const DomainLabel&) const = default;
};

// Spatial content code [content_channels, h', w'].
struct ContentCode {
  Tensor<float> values;
  bool operator==(const ContentCode&) const = default;
};

// Style vector [style_dim].
struct StyleCode {
  Tensor<float> values;
  bool operator==(const StyleCode&) const = default;
};

// Mapping-network input [latent_dim], nominally standard normal.
struct LatentCode {
  Tensor<float> values;
  bool operator==(const LatentCode&) const = default;
};

}  // namespace cbt
