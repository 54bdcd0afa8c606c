#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/tensor.hpp"

namespace sr2seg {

/// Multi-band raster with real-valued intensities in [0, 255], stored
/// band-sequential (channels, height, width).
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(std::size_t height, std::size_t width, std::size_t channels = 3, double fill = 0.0)
      : pixels_(Shape{channels, height, width}, fill) {
    if (channels == 0 || height == 0 || width == 0) throw std::invalid_argument("raster dimensions must be >= 1");
    check_range(fill);
  }
  explicit RasterImage(Tensor<double> pixels) : pixels_(std::move(pixels)) {
    if (pixels_.rank() != 3 || pixels_.numel() == 0)
      throw std::invalid_argument("raster needs a non-empty CxHxW tensor");
    for (double v : pixels_.vec()) check_range(v);
  }

  std::size_t height() const { return pixels_.height(); }
  std::size_t width() const { return pixels_.width(); }
  std::size_t channels() const { return pixels_.channels(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels_.at(c, y, x); }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels_.at(c, y, x); }

  const Tensor<double>& tensor() const { return pixels_; }
  Tensor<double>& tensor() { return pixels_; }

  /// Network-boundary view: intensities scaled to [0, 1].
  template <class T>
  Tensor<T> to_unit() const {
    Tensor<T> t(pixels_.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(pixels_[i] / 255.0);
    return t;
  }

  /// Inverse of to_unit(); values clamped into [0, 255].
  template <class T>
  static RasterImage from_unit(const Tensor<T>& t) {
    Tensor<double> p(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) p[i] = std::clamp(static_cast<double>(t[i]), 0.0, 1.0) * 255.0;
    return RasterImage(std::move(p));
  }

  friend bool operator==(const RasterImage& a, const RasterImage& b) { return a.pixels_ == b.pixels_; }

 private:
  static void check_range(double v) {
    if (!(v >= 0.0 && v <= 255.0)) throw std::invalid_argument("raster intensity outside [0, 255]");
  }
  Tensor<double> pixels_;
};

/// 8-bit quantization used at file export: clamp, then round half away from zero.
inline std::uint8_t quantize_u8(double v) {
  return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 255.0)));
}

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr std::int32_t kIgnoreId = 255;

/// Per-pixel class ids in [0, K) plus the reserved ignore id.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, std::size_t num_classes, std::int32_t fill = 0)
      : height_(height), width_(width), num_classes_(num_classes), ids_(height * width, fill) {
    if (height == 0 || width == 0) throw std::invalid_argument("label map dimensions must be >= 1");
    validate();
  }
  LabelMap(std::size_t height, std::size_t width, std::size_t num_classes, std::vector<std::int32_t> ids)
      : height_(height), width_(width), num_classes_(num_classes), ids_(std::move(ids)) {
    if (ids_.size() != height * width) throw std::invalid_argument("label map size mismatch");
    validate();
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t num_classes() const { return num_classes_; }

  std::int32_t& at(std::size_t y, std::size_t x) { return ids_[y * width_ + x]; }
  std::int32_t at(std::size_t y, std::size_t x) const { return ids_[y * width_ + x]; }
  const std::vector<std::int32_t>& ids() const { return ids_; }

  const std::vector<Rgb>& palette() const { return palette_; }
  void set_palette(std::vector<Rgb> p) { palette_ = std::move(p); }

  /// Display color of a class id; the ignore id renders black.
  Rgb color(std::int32_t id) const {
    if (id == kIgnoreId) return {0, 0, 0};
    if (static_cast<std::size_t>(id) < palette_.size()) return palette_[static_cast<std::size_t>(id)];
    return default_color(id);
  }

  static Rgb default_color(std::int32_t id) {
    static constexpr std::array<Rgb, 8> base{{{255, 255, 255}, {0, 0, 255}, {0, 255, 255}, {0, 255, 0},
                                              {255, 255, 0}, {255, 0, 0}, {255, 0, 255}, {128, 128, 128}}};
    if (id >= 0 && id < static_cast<std::int32_t>(base.size())) return base[static_cast<std::size_t>(id)];
    const auto u = static_cast<std::uint32_t>(id) * 2654435761u;
    return {static_cast<std::uint8_t>(u >> 24), static_cast<std::uint8_t>(u >> 16), static_cast<std::uint8_t>(u >> 8)};
  }

  friend bool operator==(const LabelMap& a, const LabelMap& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.num_classes_ == b.num_classes_ && a.ids_ == b.ids_;
  }

 private:
  void validate() const {
    for (std::int32_t v : ids_)
      if (v != kIgnoreId && (v < 0 || static_cast<std::size_t>(v) >= num_classes_))
        throw std::invalid_argument("label id " + std::to_string(v) + " outside [0, " +
                                    std::to_string(num_classes_) + ")");
  }

  std::size_t height_ = 0, width_ = 0, num_classes_ = 0;
  std::vector<std::int32_t> ids_;
  std::vector<Rgb> palette_;
};

}  // namespace sr2seg
