#include "dnnshield/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>

#include "dnnshield/errors.hpp"
#include "dnnshield/rng.hpp"

namespace dnnshield {

Shape Dataset::sample_shape() const { return Shape(samples.shape().begin() + 1, samples.shape().end()); }

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw InputError("dataset slice out of range");
  if (begin == end) throw InputError("empty dataset slice");
  Dataset d;
  d.samples = samples.slice_rows(begin, end);
  d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
  d.classes = classes;
  d.split = split;
  return d;
}

void Dataset::validate() const {
  if (labels.empty()) throw InputError("dataset is empty");
  if (samples.rank() < 2 || samples.dim(0) != labels.size()) {
    throw InputError("dataset holds " + std::to_string(labels.size()) + " labels for samples " +
                     shape_to_string(samples.shape()));
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw InputError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::string& file) {
  if (b.size() < at + 4) throw FormatError(file + ": truncated IDX header", at);
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       std::size_t subset_size, const std::string& split) {
  const auto ib = slurp(images);
  const auto lb = slurp(labels);
  const auto iname = images.filename().string(), lname = labels.filename().string();
  if (be32(ib, 0, iname) != 0x00000803) throw FormatError(iname + ": bad IDX image magic", 0);
  if (be32(lb, 0, lname) != 0x00000801) throw FormatError(lname + ": bad IDX label magic", 0);
  const std::size_t n = be32(ib, 4, iname), rows = be32(ib, 8, iname), cols = be32(ib, 12, iname);
  const std::size_t nl = be32(lb, 4, lname);
  if (n != nl) {
    throw FormatError(lname + " holds " + std::to_string(nl) + " labels for " + std::to_string(n) + " images", 4);
  }
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(iname + ": empty image file", 4);
  const std::size_t pixels = rows * cols;
  if (ib.size() != 16 + n * pixels) {
    throw FormatError(iname + ": expected " + std::to_string(16 + n * pixels) + " bytes, found " +
                          std::to_string(ib.size()),
                      std::min(ib.size(), 16 + n * pixels));
  }
  if (lb.size() != 8 + n) {
    throw FormatError(lname + ": expected " + std::to_string(8 + n) + " bytes, found " + std::to_string(lb.size()),
                      std::min(lb.size(), 8 + n));
  }
  const std::size_t keep = subset_size ? std::min(subset_size, n) : n;
  Dataset d;
  d.samples = Tensor({keep, 1, rows, cols});
  d.labels.resize(keep);
  d.classes = 10;
  d.split = split;
  for (std::size_t i = 0; i < keep * pixels; ++i) d.samples[i] = ib[16 + i] / 255.0;
  for (std::size_t i = 0; i < keep; ++i) {
    if (lb[8 + i] > 9) throw FormatError(lname + ": label " + std::to_string(lb[8 + i]) + " out of range", 8 + i);
    d.labels[i] = lb[8 + i];
  }
  return d;
}

std::optional<Dataset> try_load_mnist_dir(const std::filesystem::path& dir, const std::string& split,
                                          std::size_t subset_size) {
  const std::string prefix = split == "train" ? "train" : "t10k";
  for (const char* sep : {"-", "."}) {
    const auto images = dir / (prefix + "-images" + sep + "idx3-ubyte");
    const auto labels = dir / (prefix + "-labels" + sep + "idx1-ubyte");
    if (std::filesystem::exists(images) && std::filesystem::exists(labels)) {
      return load_mnist_idx(images, labels, subset_size, split);
    }
  }
  return std::nullopt;
}

Dataset make_synthetic_dataset(std::size_t classes, std::size_t n, std::uint64_t seed, const Shape& sample_shape,
                               double margin, const std::string& split) {
  if (classes < 2) throw ParameterError("synthetic dataset needs at least 2 classes");
  if (n == 0) throw ParameterError("synthetic dataset needs at least one sample");
  const std::size_t dim = shape_numel(sample_shape);
  if (dim < classes) throw ParameterError("synthetic dataset needs at least one feature per class");
  // Class means: orthonormal directions (Gram-Schmidt over Gaussian draws) scaled
  // so every pair of means is exactly `margin` apart. The means depend only on
  // (classes, shape, margin), so train and test splits share them.
  Rng mrng(0x5EEDC1A55ULL + classes * 7919 + dim);
  std::vector<std::vector<double>> means;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> v(dim);
    for (auto& x : v) x = mrng.normal();
    for (const auto& q : means) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * q[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * q[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    means.push_back(std::move(v));
  }
  const double scale = margin / std::numbers::sqrt2;
  Rng rng(seed);
  Dataset d;
  Shape full{n};
  full.insert(full.end(), sample_shape.begin(), sample_shape.end());
  d.samples = Tensor(full);
  d.labels.resize(n);
  d.classes = classes;
  d.split = split;
  for (std::size_t s = 0; s < n; ++s) {
    const auto c = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(classes) - 1));
    d.labels[s] = static_cast<int>(c);
    double* x = d.samples.data() + s * dim;
    for (std::size_t i = 0; i < dim; ++i) x[i] = scale * means[c][i] + rng.normal();
  }
  return d;
}

namespace {

struct Pt {
  double x, y;
};
using Stroke = std::vector<Pt>;

Stroke ellipse(double cx, double cy, double rx, double ry, double from = 0.0, double to = 2 * std::numbers::pi,
               int segments = 18) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double t = from + (to - from) * i / segments;
    s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return s;
}

// Glyph skeletons in a unit box (x right, y down). Optional strokes vary by sample.
std::vector<Stroke> glyph(int digit, Rng& rng) {
  const double pi = std::numbers::pi;
  std::vector<Stroke> g;
  switch (digit) {
    case 0:
      g.push_back(ellipse(0.5, 0.5, 0.28 + 0.06 * rng.uniform01(), 0.42));
      break;
    case 1:
      g.push_back({{0.5, 0.08}, {0.5, 0.92}});
      if (rng.uniform01() < 0.6) g.push_back({{0.32, 0.25}, {0.5, 0.08}});
      if (rng.uniform01() < 0.3) g.push_back({{0.32, 0.92}, {0.68, 0.92}});
      break;
    case 2:
      g.push_back(ellipse(0.5, 0.3, 0.28, 0.22, pi, 2.15 * pi, 10));
      g.back().push_back({0.2, 0.92});
      g.back().push_back({0.82, 0.92});
      break;
    case 3:
      g.push_back(ellipse(0.48, 0.29, 0.26, 0.21, 1.1 * pi, 2.5 * pi, 10));
      g.push_back(ellipse(0.48, 0.71, 0.3, 0.21, 1.5 * pi, 2.9 * pi, 10));
      break;
    case 4:
      g.push_back({{0.64, 0.92}, {0.64, 0.08}, {0.18, 0.64}, {0.86, 0.64}});
      break;
    case 5:
      g.push_back({{0.78, 0.08}, {0.3, 0.08}, {0.26, 0.45}});
      g.push_back(ellipse(0.48, 0.66, 0.3, 0.25, 1.25 * pi, 2.8 * pi, 12));
      break;
    case 6:
      g.push_back({{0.7, 0.08}, {0.45, 0.25}, {0.28, 0.5}, {0.25, 0.7}});
      g.push_back(ellipse(0.5, 0.7, 0.25, 0.22));
      break;
    case 7:
      g.push_back({{0.18, 0.08}, {0.82, 0.08}, {0.42, 0.92}});
      if (rng.uniform01() < 0.35) g.push_back({{0.4, 0.5}, {0.76, 0.5}});
      break;
    case 8:
      g.push_back(ellipse(0.5, 0.28, 0.21, 0.2));
      g.push_back(ellipse(0.5, 0.7, 0.26, 0.22));
      break;
    default:
      g.push_back(ellipse(0.5, 0.3, 0.24, 0.22));
      g.push_back({{0.74, 0.3}, {0.7, 0.6}, {0.6, 0.92}});
      break;
  }
  return g;
}

double segment_distance(double px, double py, const Pt& a, const Pt& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

void render_digit(int digit, Rng& rng, double* out) {
  constexpr int S = 28;
  auto strokes = glyph(digit, rng);
  // Per-sample style: jittered control points, affine map into a ~20px box.
  const double jitter = 0.035;
  for (auto& s : strokes) {
    for (auto& p : s) {
      p.x += jitter * rng.normal();
      p.y += jitter * rng.normal();
    }
  }
  const double angle = (rng.uniform01() - 0.5) * 0.5;
  const double shear = (rng.uniform01() - 0.5) * 0.5;
  const double sx = 16.0 + 5.0 * rng.uniform01();
  const double sy = 18.0 + 3.0 * rng.uniform01();
  const double tx = 14.0 + (rng.uniform01() - 0.5) * 4.0;
  const double ty = 14.0 + (rng.uniform01() - 0.5) * 4.0;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (auto& s : strokes) {
    for (auto& p : s) {
      const double u = (p.x - 0.5 + shear * (p.y - 0.5)) * sx;
      const double v = (p.y - 0.5) * sy;
      p = {tx + ca * u - sa * v, ty + sa * u + ca * v};
    }
  }
  const double width = 0.8 + 1.1 * rng.uniform01();
  const double ink = 0.75 + 0.25 * rng.uniform01();
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double d = 1e9;
      for (const auto& s : strokes) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(px, py, s[i], s[i + 1]));
      }
      double v = ink * std::clamp(width + 0.5 - d, 0.0, 1.0);
      v += 0.06 * rng.normal();
      out[y * S + x] = std::clamp(v, 0.0, 1.0);
    }
  }
}

}  // namespace

Dataset make_digit_dataset(std::size_t n, std::uint64_t seed, const std::string& split) {
  if (n == 0) throw ParameterError("digit dataset needs at least one sample");
  Dataset d;
  d.samples = Tensor({n, 1, 28, 28});
  d.labels.resize(n);
  d.classes = 10;
  d.split = split;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int digit = static_cast<int>(rng.uniform_int(0, 9));
    d.labels[i] = digit;
    Rng sample_rng(rng.fork());
    render_digit(digit, sample_rng, d.samples.data() + i * 784);
  }
  return d;
}

std::optional<std::filesystem::path> default_data_dir() {
  if (const char* v = std::getenv("DNNSHIELD_DATA_DIR"); v && *v) return std::filesystem::path(v);
  return std::nullopt;
}

DataPair load_desk_data(const std::optional<std::filesystem::path>& data_dir, std::size_t n_train,
                        std::size_t n_test, std::uint64_t seed) {
  if (data_dir) {
    auto train = try_load_mnist_dir(*data_dir, "train", n_train);
    auto test = try_load_mnist_dir(*data_dir, "test", n_test);
    if (train && test) return {std::move(*train), std::move(*test), "mnist:" + data_dir->string()};
  }
  // Different seeds per split: the samples are continuous draws, so the splits share no sample.
  return {make_digit_dataset(n_train, seed * 2 + 1, "train"), make_digit_dataset(n_test, seed * 2 + 2, "test"),
          "rendered-digits"};
}

}  // namespace dnnshield
