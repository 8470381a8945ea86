#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cbt/errors.hpp"
#include "cbt/rng.hpp"
#include "cbt/tensor.hpp"
#include "cbt/types.hpp"

namespace cbt {

namespace fs = std::filesystem;

enum class Split { train, test };

struct ManifestEntry {
  std::string path;  // relative to the manifest root
  DomainLabel label;
  Split split = Split::train;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  fs::path root;
  std::vector<std::string> domains;
  std::vector<ManifestEntry> entries;

  int num_domains() const noexcept { return static_cast<int>(domains.size()); }

  std::vector<int> indices(Split split) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == split) out.push_back(static_cast<int>(i));
    return out;
  }
  std::vector<int> indices(Split split, int domain) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == split && entries[i].label.index == domain) out.push_back(static_cast<int>(i));
    return out;
  }
  bool operator==(const DatasetManifest&) const = default;
};

// ---------------------------------------------------------------------------
// Image IO

inline bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Decodes to RGB, resizes to size x size when needed, maps to [-1, 1].
inline Image load_image(const fs::path& path, int size) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DatasetError("cannot decode image " + path.string());
  if (bgr.rows != size || bgr.cols != size) {
    const int interp = (bgr.rows > size || bgr.cols > size) ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::resize(bgr, bgr, cv::Size(size, size), 0, 0, interp);
  }
  Tensor<float> t(Shape{3, size, size});
  for (int y = 0; y < size; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        t[(static_cast<std::size_t>(c) * size + y) * size + x] = normalize_pixel(row[x][2 - c]);
  }
  return Image(std::move(t));
}

inline cv::Mat to_bgr_mat(const Image& img) {
  const int h = img.height(), w = img.width(), ch = img.channels();
  cv::Mat m(h, w, CV_8UC3);
  const auto& p = img.pixels();
  for (int y = 0; y < h; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src = ch == 1 ? 0 : c;
        row[x][2 - c] = denormalize_pixel(p[(static_cast<std::size_t>(src) * h + y) * w + x]);
      }
  }
  return m;
}

inline void save_image(const Image& img, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_bgr_mat(img))) throw IoError("cannot write image " + path.string());
}

// ---------------------------------------------------------------------------
// Manifest construction

// One subdirectory per domain; files in lexicographic order, the last
// `test_per_domain` of each domain form the test split.
inline DatasetManifest scan_dataset(const fs::path& root, int test_per_domain) {
  if (test_per_domain < 0) throw ValidationError("test_per_domain must be nonnegative");
  if (!fs::is_directory(root)) throw DatasetError("dataset root is not a directory: " + root.string());
  DatasetManifest m;
  m.root = root;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DatasetError("no domain directories under " + root.string());
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    const std::string name = dir.filename().string();
    if (files.empty()) throw DatasetError("domain '" + name + "' has no image files");
    if (static_cast<int>(files.size()) <= test_per_domain)
      throw DatasetError("domain '" + name + "' has no training images after reserving the test split");
    const int label = m.num_domains();
    m.domains.push_back(name);
    const std::size_t first_test = files.size() - static_cast<std::size_t>(test_per_domain);
    for (std::size_t i = 0; i < files.size(); ++i) {
      if (cv::imread(files[i].string(), cv::IMREAD_UNCHANGED).empty())
        throw DatasetError("cannot decode image " + files[i].string());
      m.entries.push_back(ManifestEntry{fs::relative(files[i], root).generic_string(), DomainLabel{label},
                                        i >= first_test ? Split::test : Split::train});
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Coarse-domain aggregation

struct AggregationRule {
  std::string pattern;
  std::string coarse;
  bool operator==(const AggregationRule&) const = default;
};

struct AggregationMap {
  std::vector<AggregationRule> rules;
};

// '*' matches any run of characters (including none); everything else is literal.
inline bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

// Lines `pattern -> coarse_name`; '#' starts a comment.
inline AggregationMap parse_aggregation(std::string_view text) {
  AggregationMap map;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto arrow = line.find("->");
    if (arrow == std::string::npos) throw ParseError("", line_no, "expected 'pattern -> coarse_name'");
    AggregationRule r{trim(line.substr(0, arrow)), trim(line.substr(arrow + 2))};
    if (r.pattern.empty() || r.coarse.empty()) throw ParseError("", line_no, "empty pattern or coarse name");
    map.rules.push_back(std::move(r));
  }
  return map;
}

inline AggregationMap load_aggregation(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open aggregation file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_aggregation(ss.str());
}

// Relabels entries by the first matching rule. Coarse domains are ordered
// lexicographically and only those actually hit are kept.
inline DatasetManifest apply_aggregation(const DatasetManifest& m, const AggregationMap& map) {
  std::vector<std::string> target(m.domains.size());
  std::vector<std::string> unmatched;
  for (std::size_t d = 0; d < m.domains.size(); ++d) {
    const auto it = std::find_if(map.rules.begin(), map.rules.end(),
                                 [&](const AggregationRule& r) { return glob_match(r.pattern, m.domains[d]); });
    if (it == map.rules.end()) unmatched.push_back(m.domains[d]);
    else target[d] = it->coarse;
  }
  if (!unmatched.empty()) {
    std::string list;
    for (const auto& u : unmatched) list += (list.empty() ? "" : ", ") + u;
    throw ValidationError("labels matching no aggregation rule: " + list);
  }
  const std::set<std::string> coarse(target.begin(), target.end());
  DatasetManifest out;
  out.root = m.root;
  out.domains.assign(coarse.begin(), coarse.end());
  out.entries = m.entries;
  for (auto& e : out.entries) {
    const auto& name = target.at(static_cast<std::size_t>(e.label.index));
    e.label.index = static_cast<int>(std::lower_bound(out.domains.begin(), out.domains.end(), name) - out.domains.begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Foreground statistics on canonical-range images

// Circular hue distance on [0, 1).
inline double hue_distance(double a, double b) {
  const double d = std::fabs(a - b) - std::floor(std::fabs(a - b));
  return std::min(d, 1.0 - d);
}

inline double rgb_to_hue(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  if (d <= 0) return 0.0;
  double h;
  if (mx == r) h = std::fmod((g - b) / d, 6.0);
  else if (mx == g) h = (b - r) / d + 2.0;
  else h = (r - g) / d + 4.0;
  h /= 6.0;
  return h < 0 ? h + 1.0 : h;
}

struct ForegroundStats {
  int count = 0;
  double centroid_x = 0;  // pixels, pixel centres at i + 0.5
  double centroid_y = 0;
  double hue = 0;  // circular mean over foreground pixels
};

// Foreground = pixels whose brightest channel exceeds 0.3 on the [0, 1] scale.
inline ForegroundStats foreground_stats(const Image& img, double threshold = 0.3) {
  if (img.channels() != 3) throw DimensionError("foreground statistics need an RGB image");
  const int h = img.height(), w = img.width();
  const auto& p = img.pixels();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  ForegroundStats s;
  double sx = 0, sy = 0, hc = 0, hs = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double r = (p[i] + 1.0) / 2.0, g = (p[plane + i] + 1.0) / 2.0, b = (p[2 * plane + i] + 1.0) / 2.0;
      if (std::max({r, g, b}) <= threshold) continue;
      ++s.count;
      sx += x + 0.5;
      sy += y + 0.5;
      const double ang = 2.0 * std::numbers::pi * rgb_to_hue(r, g, b);
      hc += std::cos(ang);
      hs += std::sin(ang);
    }
  if (s.count == 0) return s;
  s.centroid_x = sx / s.count;
  s.centroid_y = sy / s.count;
  double hue = std::atan2(hs, hc) / (2.0 * std::numbers::pi);
  s.hue = hue < 0 ? hue + 1.0 : hue;
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic factor-controlled dataset

enum class Texture { low, mid, high };

inline const char* texture_name(Texture t) {
  switch (t) {
    case Texture::low: return "low";
    case Texture::mid: return "mid";
    case Texture::high: return "high";
  }
  return "low";
}

inline Texture parse_texture(std::string_view s) {
  if (s == "low") return Texture::low;
  if (s == "mid") return Texture::mid;
  if (s == "high") return Texture::high;
  throw ParseError("texture", 0, "unknown texture '" + std::string(s) + "'");
}

inline int texture_frequency(Texture t) { return t == Texture::low ? 1 : t == Texture::mid ? 2 : 4; }

enum class ShapeKind { circle, square, triangle };

inline ShapeKind shape_for_domain(int domain) { return static_cast<ShapeKind>(domain % 3); }

inline const char* shape_name(ShapeKind s) {
  return s == ShapeKind::circle ? "circle" : s == ShapeKind::square ? "square" : "triangle";
}

struct SyntheticFactorSpec {
  int num_domains = 2;
  int image_size = 32;
  int samples_per_domain = 500;
  std::uint64_t seed = 0;
  int test_per_domain = 0;  // split of the returned manifest
};

struct FactorRecord {
  std::string filename;  // relative to the dataset root
  int domain = 0;
  double pos_x = 0.5;  // fraction of the image width
  double pos_y = 0.5;
  double rotation = 0;  // radians
  double hue = 0;
  Texture texture = Texture::low;
  bool operator==(const FactorRecord&) const = default;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<FactorRecord> ledger;
};

// Circumradius of every shape as a fraction of the image side; with positions
// in [0.2, 0.8] no shape touches the border.
inline constexpr double kShapeRadius = 0.18;

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// True if the shape-frame point (u, v), already rotated and centred, lies
// inside the shape of circumradius r.
inline bool inside_shape(ShapeKind kind, double u, double v, double r) {
  switch (kind) {
    case ShapeKind::circle: return u * u + v * v <= r * r;
    case ShapeKind::square: return std::fabs(u) <= r / std::numbers::sqrt2 && std::fabs(v) <= r / std::numbers::sqrt2;
    case ShapeKind::triangle:
      for (int k = 0; k < 3; ++k) {
        const double a = std::numbers::pi / 2 + std::numbers::pi + 2.0 * std::numbers::pi * k / 3.0;
        if (u * std::cos(a) + v * std::sin(a) > r / 2) return false;
      }
      return true;
  }
  return false;
}

// 4x4 supersampled rendering; colour is HSV(hue, 1, value) with stripe
// brightness along the shape's rotated horizontal axis, on black.
inline Image render_shape(ShapeKind kind, const FactorRecord& f, int size) {
  constexpr int kSub = 4;
  const double r = kShapeRadius * size;
  const double cx = f.pos_x * size, cy = f.pos_y * size;
  const double cr = std::cos(f.rotation), sr = std::sin(f.rotation);
  const int freq = texture_frequency(f.texture);
  Tensor<float> t(Shape{3, size, size}, -1.0f);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      std::array<double, 3> acc{};
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x + (sx + 0.5) / kSub - cx, py = y + (sy + 0.5) / kSub - cy;
          const double u = cr * px + sr * py, v = -sr * px + cr * py;
          if (!inside_shape(kind, u, v, r)) continue;
          const double stripe = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * (u + r) / (2.0 * r));
          const auto rgb = hsv_to_rgb(f.hue, 1.0, 0.6 + 0.4 * stripe);
          for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
        }
      for (int c = 0; c < 3; ++c) {
        const auto q = static_cast<std::uint8_t>(std::lround(255.0 * acc[c] / (kSub * kSub)));
        t[c * plane + static_cast<std::size_t>(y) * size + x] = normalize_pixel(q);
      }
    }
  return Image(std::move(t));
}

inline std::string synthetic_domain_name(int d) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "d%d_%s", d, shape_name(shape_for_domain(d)));
  return buf;
}

inline void write_factor_ledger(const std::vector<FactorRecord>& ledger, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write factor ledger " + path.string());
  out << "filename,domain,pos_x,pos_y,rotation,hue,texture\n";
  char buf[256];
  for (const auto& f : ledger) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g,%.17g,%.17g,%s\n", f.filename.c_str(), f.domain, f.pos_x, f.pos_y,
                  f.rotation, f.hue, texture_name(f.texture));
    out << buf;
  }
  if (!out) throw IoError("failed writing factor ledger " + path.string());
}

inline std::vector<FactorRecord> read_factor_ledger(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open factor ledger " + path.string());
  std::vector<FactorRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (++line_no == 1 || line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 7) throw ParseError("", line_no, "expected 7 ledger columns");
    try {
      out.push_back(FactorRecord{cols[0], std::stoi(cols[1]), std::stod(cols[2]), std::stod(cols[3]), std::stod(cols[4]),
                                 std::stod(cols[5]), parse_texture(cols[6])});
    } catch (const std::logic_error&) {
      throw ParseError("", line_no, "malformed ledger row");
    }
  }
  return out;
}

inline constexpr const char* kFactorLedgerName = "factors.csv";

// Writes `<out>/<domain>/img_NNNNN.png` plus `<out>/factors.csv`. Content
// factors are drawn independently of the domain; the domain fixes the shape.
inline SyntheticDataset generate_synthetic(const SyntheticFactorSpec& spec, const fs::path& out_dir) {
  if (spec.num_domains < 1) throw ValidationError("num_domains must be positive");
  if (spec.image_size < 8) throw ValidationError("image_size must be at least 8");
  if (spec.samples_per_domain < 0 || spec.test_per_domain < 0) throw ValidationError("sample counts must be nonnegative");
  if (spec.samples_per_domain > 0 && spec.test_per_domain >= spec.samples_per_domain)
    throw ValidationError("test_per_domain must leave at least one training image per domain");
  fs::create_directories(out_dir);
  RngStream rng(spec.seed, "synthetic");
  SyntheticDataset ds;
  ds.manifest.root = out_dir;
  for (int d = 0; d < spec.num_domains; ++d) {
    const std::string dom = synthetic_domain_name(d);
    ds.manifest.domains.push_back(dom);
    fs::create_directories(out_dir / dom);
    for (int i = 0; i < spec.samples_per_domain; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "img_%05d.png", i);
      FactorRecord f;
      f.filename = dom + "/" + name;
      f.domain = d;
      f.pos_x = rng.uniform(0.2, 0.8);
      f.pos_y = rng.uniform(0.2, 0.8);
      f.rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
      f.hue = rng.uniform();
      f.texture = static_cast<Texture>(rng.uniform_int(3));
      save_image(render_shape(shape_for_domain(d), f, spec.image_size), out_dir / f.filename);
      ds.manifest.entries.push_back(ManifestEntry{f.filename, DomainLabel{d},
                                                  i >= spec.samples_per_domain - spec.test_per_domain ? Split::test
                                                                                                      : Split::train});
      ds.ledger.push_back(std::move(f));
    }
  }
  write_factor_ledger(ds.ledger, out_dir / kFactorLedgerName);
  return ds;
}

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  Tensor<float> images;  // [N, 3, S, S]
  std::vector<int> labels;
};

inline Image flip_horizontal(const Image& img) {
  Tensor<float> t = img.pixels();
  const int c = img.channels(), h = img.height(), w = img.width();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      float* row = t.data() + (static_cast<std::size_t>(ch) * h + y) * w;
      std::reverse(row, row + w);
    }
  return Image(std::move(t));
}

// With `flip_rng`, training-split entries are mirrored with probability 1/2,
// one draw per training entry in index order.
inline Batch load_batch(const DatasetManifest& m, std::span<const int> indices, int image_size,
                        RngStream* flip_rng = nullptr) {
  if (indices.empty()) throw ValidationError("load_batch needs at least one index");
  std::vector<Tensor<float>> items;
  Batch b;
  for (int i : indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= m.entries.size())
      throw IndexError("manifest index " + std::to_string(i) + " out of range");
    const auto& e = m.entries[static_cast<std::size_t>(i)];
    Image img = load_image(m.root / e.path, image_size);
    if (flip_rng != nullptr && e.split == Split::train && flip_rng->bernoulli(0.5)) img = flip_horizontal(img);
    items.push_back(img.pixels());
    b.labels.push_back(e.label.index);
  }
  b.images = stack_batch<float>(items);
  return b;
}

}  // namespace cbt
