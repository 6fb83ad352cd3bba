#pragma once

// Procedural glyph images with exact class and attribute labels.
//
// A class is a stroke glyph (F, L, P, N, Z, 7, J, 4). Each of the six binary
// attributes toggles one rendering parameter:
//   0 fill-hue           orange-red vs blue strokes
//   1 stroke-width       thin vs thick strokes
//   2 background-bright  dark vs light background
//   3 h-flip             glyph mirrored left-right
//   4 large-scale        small vs large glyph box
//   5 upper-half         glyph centred in the lower vs upper half
// A one-pixel position jitter adds nuisance variation.

#include <Eigen/Core>
#include <array>
#include <mutex>
#include <random>

#include "dualdis/tensor.hpp"

namespace dualdis {

inline constexpr int kSynthAttributes = 6;
inline constexpr int kMaxGlyphs = 8;

struct SyntheticSpec {
  int n_classes = 5;
  int image_size = 32;
  int samples_per_class = 200;
  int jitter = 1;
  std::uint64_t seed = 7;

  void validate() const {
    if (n_classes < 1 || n_classes > kMaxGlyphs) throw Error("synthetic: n_classes must be in [1, 8]");
    if (image_size < 24) throw Error("synthetic: image_size " + std::to_string(image_size) + " is too small for the stroke widths (minimum 24)");
    if (samples_per_class < 2 || samples_per_class % 2) throw Error("synthetic: samples_per_class must be even and >= 2");
    if (jitter < 0 || jitter > image_size / 16) throw Error("synthetic: jitter out of range");
  }
};

struct GlyphParams {
  int glyph = 0;
  std::array<bool, kSynthAttributes> attr{};
  int jx = 0;
  int jy = 0;
};

namespace detail {

struct Segment {
  float x0, y0, x1, y1;
};

inline const std::vector<Segment>& glyph_strokes(int g) {
  static const std::array<std::vector<Segment>, kMaxGlyphs> glyphs = {{
      {{0, 0, 0, 1}, {0, 0, 1, 0}, {0, .5f, .7f, .5f}},                   // F
      {{0, 0, 0, 1}, {0, 1, 1, 1}},                                       // L
      {{0, 0, 0, 1}, {0, 0, 1, 0}, {1, 0, 1, .5f}, {0, .5f, 1, .5f}},     // P
      {{0, 1, 0, 0}, {0, 0, 1, 1}, {1, 1, 1, 0}},                         // N
      {{0, 0, 1, 0}, {1, 0, 0, 1}, {0, 1, 1, 1}},                         // Z
      {{0, 0, 1, 0}, {1, 0, .3f, 1}},                                     // 7
      {{1, 0, 1, 1}, {1, 1, 0, 1}, {0, 1, 0, .6f}},                       // J
      {{.7f, 0, .7f, 1}, {.7f, 0, 0, .65f}, {0, .65f, 1, .65f}},          // 4
  }};
  return glyphs.at(static_cast<std::size_t>(g));
}

inline float segment_distance(float px, float py, const Segment& s) {
  const float dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const float len2 = dx * dx + dy * dy;
  float t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0f;
  t = std::clamp(t, 0.0f, 1.0f);
  const float ex = s.x0 + t * dx - px, ey = s.y0 + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

inline float quantize(float v) { return std::round(v * 255.0f) / 255.0f; }

}  // namespace detail

/// Renders one RGB image (3, size, size) in [0,1], quantized to 8 bits.
inline Tensor<float> render_glyph(const GlyphParams& p, int size) {
  const float s = static_cast<float>(size);
  const float box = (p.attr[4] ? 0.56f : 0.375f) * s;
  const float half_width = p.attr[1] ? 0.056f * s : 0.028f * s;
  const float cx = (s - 1) / 2 + static_cast<float>(p.jx);
  const float cy = (p.attr[5] ? 0.3125f : 0.672f) * s + static_cast<float>(p.jy);
  const float gw = 0.7f * box;
  std::vector<detail::Segment> segs;
  for (const auto& g : detail::glyph_strokes(p.glyph)) {
    auto mx = [&](float gx) { return cx + (p.attr[3] ? (0.5f - gx) : (gx - 0.5f)) * gw; };
    auto my = [&](float gy) { return cy + (gy - 0.5f) * box; };
    segs.push_back({mx(g.x0), my(g.y0), mx(g.x1), my(g.y1)});
  }
  const std::array<float, 3> fg = p.attr[0] ? std::array<float, 3>{0.10f, 0.45f, 0.95f} : std::array<float, 3>{0.90f, 0.25f, 0.10f};
  const float bg = p.attr[2] ? 0.80f : 0.10f;
  Tensor<float> img({3, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      bool ink = false;
      for (const auto& sg : segs)
        if (detail::segment_distance(static_cast<float>(x), static_cast<float>(y), sg) <= half_width) {
          ink = true;
          break;
        }
      for (int c = 0; c < 3; ++c) img[(static_cast<std::size_t>(c) * size + y) * size + x] = detail::quantize(ink ? fg[c] : bg);
    }
  return img;
}

/// Mirrors a (C,H,W) image left-right.
inline Tensor<float> flip_horizontal(const Tensor<float>& img) {
  Tensor<float> out(img.shape());
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out[(static_cast<std::size_t>(c) * H + y) * W + x] = img[(static_cast<std::size_t>(c) * H + y) * W + (W - 1 - x)];
  return out;
}

struct SyntheticSample {
  GlyphParams params;
  Tensor<float> image;
};

/// Deterministic balanced sample: each class gets complement pairs (c, ~c)
/// of attribute codes, so every attribute marginal is exactly 1/2 per class.
inline std::vector<SyntheticSample> generate_synthetic_samples(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> code(0, (1 << kSynthAttributes) - 1);
  std::uniform_int_distribution<int> jit(-spec.jitter, spec.jitter);
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(spec.n_classes) * spec.samples_per_class);
  for (int g = 0; g < spec.n_classes; ++g)
    for (int i = 0; i < spec.samples_per_class / 2; ++i) {
      const int c = code(rng);
      for (int half = 0; half < 2; ++half) {
        GlyphParams p;
        p.glyph = g;
        const int bits = half ? (~c & ((1 << kSynthAttributes) - 1)) : c;
        for (int a = 0; a < kSynthAttributes; ++a) p.attr[a] = (bits >> a) & 1;
        p.jx = jit(rng);
        p.jy = jit(rng);
        out.push_back({p, render_glyph(p, spec.image_size)});
      }
    }
  return out;
}

/// Ground-truth oracle: nearest (L2) render over every glyph, attribute code
/// and jitter offset. Exact on clean renders; used to score decoded images.
class GlyphOracle {
 public:
  GlyphOracle(int n_classes, int image_size, int jitter) : n_classes_(n_classes), size_(image_size) {
    for (int g = 0; g < n_classes; ++g)
      for (int code = 0; code < (1 << kSynthAttributes); ++code)
        for (int jy = -jitter; jy <= jitter; ++jy)
          for (int jx = -jitter; jx <= jitter; ++jx) {
            GlyphParams p;
            p.glyph = g;
            for (int a = 0; a < kSynthAttributes; ++a) p.attr[a] = (code >> a) & 1;
            p.jx = jx;
            p.jy = jy;
            params_.push_back(p);
          }
    const int dim = 3 * size_ * size_;
    templates_.resize(static_cast<Eigen::Index>(params_.size()), dim);
    norms_.resize(static_cast<Eigen::Index>(params_.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Tensor<float> img = render_glyph(params_[i], size_);
      templates_.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXf>(img.data(), dim);
      norms_[static_cast<Eigen::Index>(i)] = templates_.row(static_cast<Eigen::Index>(i)).squaredNorm();
    }
  }

  int n_classes() const { return n_classes_; }

  /// Best-matching parameters for each image of a (B,3,H,W) batch.
  std::vector<GlyphParams> classify(const Tensor<float>& images) const {
    const int dim = 3 * size_ * size_;
    if (images.rank() != 4 || images.size() != static_cast<std::size_t>(images.dim(0)) * dim) {
      throw ShapeError("GlyphOracle", "(B,3," + std::to_string(size_) + "," + std::to_string(size_) + ")", images.shape());
    }
    const int B = images.dim(0);
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(images.data(), B, dim);
    // argmin ||t||^2 - 2 t.x  (||x||^2 is constant per image)
    const Eigen::MatrixXf scores = (-2.0f * (templates_ * X.transpose())).colwise() + norms_;
    std::vector<GlyphParams> out(B);
    for (int b = 0; b < B; ++b) {
      Eigen::Index best = 0;
      scores.col(b).minCoeff(&best);
      out[b] = params_[static_cast<std::size_t>(best)];
    }
    return out;
  }

 private:
  int n_classes_;
  int size_;
  std::vector<GlyphParams> params_;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> templates_;
  Eigen::VectorXf norms_;
};

}  // namespace dualdis
