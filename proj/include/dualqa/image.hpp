#ifndef DUALQA_IMAGE_HPP
#define DUALQA_IMAGE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dualqa/errors.hpp"

namespace dualqa {

/// Real-valued H x W x C raster with every value in [0, 255]. Storage is
/// row-major, channel-interleaved, so all channels of one pixel are
/// adjacent. Immutable after construction; attacks build perturbed copies.
class Image {
 public:
  Image(int height, int width, int channels)
      : height_(height), width_(width), channels_(channels) {
    check_shape(height, width, channels);
    pixels_.assign(static_cast<std::size_t>(height) * width * channels, 0.0);
  }

  Image(int height, int width, int channels, std::vector<double> pixels)
      : height_(height),
        width_(width),
        channels_(channels),
        pixels_(std::move(pixels)) {
    check_shape(height, width, channels);
    if (pixels_.size() != static_cast<std::size_t>(height) * width * channels)
      throw ShapeMismatchError("pixel buffer size " +
                               std::to_string(pixels_.size()) +
                               " does not match " + std::to_string(height) +
                               "x" + std::to_string(width) + "x" +
                               std::to_string(channels));
    for (double v : pixels_)
      if (!(v >= 0.0 && v <= 255.0))
        throw OutOfBoundsError("pixel value " + std::to_string(v) +
                               " outside [0, 255]");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return pixels_.size(); }
  int pixel_count() const { return height_ * width_; }

  std::size_t offset(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + ch;
  }

  double at(int y, int x, int ch) const { return pixels_[offset(y, x, ch)]; }
  double operator[](std::size_t i) const { return pixels_[i]; }
  const std::vector<double>& pixels() const { return pixels_; }

  bool same_shape(const Image& o) const {
    return height_ == o.height_ && width_ == o.width_ &&
           channels_ == o.channels_;
  }

  bool operator==(const Image& o) const {
    return same_shape(o) && pixels_ == o.pixels_;
  }

 private:
  static void check_shape(int h, int w, int c) {
    if (h <= 0 || w <= 0)
      throw ShapeMismatchError("image dimensions must be positive");
    if (c != 1 && c != 3)
      throw ShapeMismatchError("channels must be 1 or 3, got " +
                               std::to_string(c));
  }

  int height_;
  int width_;
  int channels_;
  std::vector<double> pixels_;
};

/// The four distances between an image pair. l0_pixels counts pixels where
/// any channel differs; l1/l2/linf are over the flattened channel values.
struct NormQuad {
  std::int64_t l0_pixels = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double linf = 0.0;
};

inline NormQuad norms(const Image& a, const Image& b) {
  if (!a.same_shape(b))
    throw ShapeMismatchError("norms: image shapes differ");
  NormQuad q;
  double sumsq = 0.0;
  const int c = a.channels();
  const auto& pa = a.pixels();
  const auto& pb = b.pixels();
  for (std::size_t p = 0; p < pa.size(); p += c) {
    bool pixel_changed = false;
    for (int ch = 0; ch < c; ++ch) {
      double d = std::abs(pa[p + ch] - pb[p + ch]);
      if (d > 0.0) pixel_changed = true;
      q.l1 += d;
      sumsq += d * d;
      q.linf = std::max(q.linf, d);
    }
    if (pixel_changed) ++q.l0_pixels;
  }
  q.l2 = std::sqrt(sumsq);
  return q;
}

inline double clip_pixel(double v) { return std::clamp(v, 0.0, 255.0); }

/// One sparse perturbation entry: add `delta` to channel `ch` of pixel
/// (y, x); the sum is clipped to [0, 255].
struct PixelDelta {
  int y = 0;
  int x = 0;
  int channel = 0;
  double delta = 0.0;
};

inline Image apply_perturbation(const Image& x,
                                std::span<const PixelDelta> delta) {
  std::vector<double> px = x.pixels();
  for (const auto& d : delta) {
    if (d.y < 0 || d.y >= x.height() || d.x < 0 || d.x >= x.width() ||
        d.channel < 0 || d.channel >= x.channels())
      throw OutOfBoundsError("perturbation coordinate (" +
                             std::to_string(d.y) + "," + std::to_string(d.x) +
                             "," + std::to_string(d.channel) +
                             ") outside image");
    std::size_t i = x.offset(d.y, d.x, d.channel);
    px[i] = clip_pixel(px[i] + d.delta);
  }
  return Image(x.height(), x.width(), x.channels(), std::move(px));
}

inline Image apply_perturbation(const Image& x, std::span<const double> dense) {
  if (dense.size() != x.size())
    throw ShapeMismatchError("dense perturbation length " +
                             std::to_string(dense.size()) +
                             " != image size " + std::to_string(x.size()));
  std::vector<double> px(x.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = clip_pixel(x.pixels()[i] + dense[i]);
  return Image(x.height(), x.width(), x.channels(), std::move(px));
}

/// Demonstrates that an L2 budget alone does not bound how many pixels an
/// attack may touch. Candidate family: the s x s block anchored at (0, 0)
/// with every channel value moved `step` intensity levels toward its
/// farther extreme (255 below midpoint, 0 above; saturating). Returns the
/// candidate maximizing changed-pixel count, with the largest feasible step
/// as tie-break, subject to l2 <= l2_budget. Steps are integers >= 1.
inline Image concentrated_counterexample(const Image& x, double l2_budget) {
  if (l2_budget <= 0.0)
    throw BudgetTooSmallError("l2 budget must be positive");

  auto block_candidate = [&](int s, int step) {
    std::vector<double> px = x.pixels();
    for (int y = 0; y < s; ++y)
      for (int xx = 0; xx < s; ++xx)
        for (int ch = 0; ch < x.channels(); ++ch) {
          std::size_t i = x.offset(y, xx, ch);
          double extreme = px[i] < 127.5 ? 255.0 : 0.0;
          double dir = extreme > px[i] ? 1.0 : -1.0;
          double move = std::min<double>(step, std::abs(extreme - px[i]));
          px[i] += dir * move;
        }
    return Image(x.height(), x.width(), x.channels(), std::move(px));
  };

  const int s_max = std::min(x.height(), x.width());
  int best_s = 0, best_step = 0;
  for (int s = 1; s <= s_max; ++s) {
    // l2 grows with step, so binary search the largest feasible step.
    int lo = 1, hi = 255, found = 0;
    while (lo <= hi) {
      int mid = (lo + hi) / 2;
      if (norms(x, block_candidate(s, mid)).l2 <= l2_budget) {
        found = mid;
        lo = mid + 1;
      } else {
        hi = mid - 1;
      }
    }
    if (found == 0) break;  // larger blocks only cost more
    best_s = s;
    best_step = found;
  }
  if (best_s == 0)
    throw BudgetTooSmallError(
        "l2 budget " + std::to_string(l2_budget) +
        " cannot move one pixel by a full intensity level");
  return block_candidate(best_s, best_step);
}

}  // namespace dualqa

#endif  // DUALQA_IMAGE_HPP
