#pragma once

// PNG and TIFF codecs for rasters and label maps. PNG goes through the libpng
// simplified API; TIFF support covers 8-bit contiguous scanline files.

#include <png.h>
#include <tiffio.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/image.hpp"

namespace sr2seg {

/// Interleaved 8-bit samples as stored in the file.
struct DecodedRaster {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> samples;
  bool indexed = false;
  std::vector<Rgb> palette;
};

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

inline DecodedRaster read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
  DecodedRaster out;
  out.height = img.height;
  out.width = img.width;
  const bool indexed = (img.format & PNG_FORMAT_FLAG_COLORMAP) != 0;
  std::vector<png_byte> cmap;
  if (indexed) {
    img.format = PNG_FORMAT_RGB_COLORMAP;
    out.channels = 1;
    out.indexed = true;
    cmap.resize(PNG_IMAGE_COLORMAP_SIZE(img));
  } else if (img.format & PNG_FORMAT_FLAG_COLOR) {
    img.format = PNG_FORMAT_RGB;
    out.channels = 3;
  } else {
    img.format = PNG_FORMAT_GRAY;
    out.channels = 1;
  }
  out.samples.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.samples.data(), 0, indexed ? cmap.data() : nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  if (indexed)
    for (std::size_t i = 0; i + 2 < cmap.size() && i / 3 < img.colormap_entries; i += 3)
      out.palette.push_back({cmap[i], cmap[i + 1], cmap[i + 2]});
  return out;
}

inline DecodedRaster read_tiff(const std::filesystem::path& path) {
  std::unique_ptr<TIFF, decltype(&TIFFClose)> tif(TIFFOpen(path.string().c_str(), "r"), &TIFFClose);
  if (!tif) throw std::runtime_error("cannot open TIFF " + path.string());
  std::uint32_t w = 0, h = 0;
  std::uint16_t spp = 1, bps = 8, planar = PLANARCONFIG_CONTIG;
  TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &w);
  TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &h);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bps);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_PLANARCONFIG, &planar);
  if (bps != 8 || planar != PLANARCONFIG_CONTIG || w == 0 || h == 0)
    throw std::runtime_error("unsupported TIFF layout in " + path.string() + " (need 8-bit contiguous samples)");
  DecodedRaster out;
  out.height = h;
  out.width = w;
  out.channels = spp;
  out.samples.resize(static_cast<std::size_t>(w) * h * spp);
  const auto line = static_cast<std::size_t>(TIFFScanlineSize(tif.get()));
  std::vector<std::uint8_t> buf(std::max(line, static_cast<std::size_t>(w) * spp));
  for (std::uint32_t y = 0; y < h; ++y) {
    if (TIFFReadScanline(tif.get(), buf.data(), y, 0) < 0)
      throw std::runtime_error("TIFF scanline read failed in " + path.string());
    std::copy_n(buf.begin(), static_cast<std::size_t>(w) * spp, out.samples.begin() + static_cast<std::ptrdiff_t>(y) * w * spp);
  }
  return out;
}

}  // namespace detail

inline DecodedRaster read_raster_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("file not found: " + path.string());
  const std::string ext = detail::lower_ext(path);
  if (ext == ".png") return detail::read_png(path);
  if (ext == ".tif" || ext == ".tiff") return detail::read_tiff(path);
  throw std::runtime_error("unsupported raster extension: " + path.string());
}

/// Loads an image; palettes are expanded and alpha is dropped.
inline RasterImage load_image(const std::filesystem::path& path) {
  const DecodedRaster d = read_raster_file(path);
  std::size_t bands = d.indexed ? 3 : d.channels;
  if (bands == 2 || bands == 4) --bands;  // drop alpha
  if (bands > 4) bands = 3;
  RasterImage img(d.height, d.width, bands);
  for (std::size_t y = 0; y < d.height; ++y)
    for (std::size_t x = 0; x < d.width; ++x) {
      const std::size_t px = y * d.width + x;
      for (std::size_t c = 0; c < bands; ++c) {
        std::uint8_t v;
        if (d.indexed) {
          const std::uint8_t idx = d.samples[px];
          v = idx < d.palette.size() ? d.palette[idx][c] : 0;
        } else {
          v = d.samples[px * d.channels + c];
        }
        img.at(c, y, x) = v;
      }
    }
  return img;
}

/// Loads a class-id raster: single-channel gray values or palette indices,
/// or an RGB color-coded map when `palette` is given (color i -> id i).
inline LabelMap load_labels(const std::filesystem::path& path, std::size_t num_classes,
                            const std::vector<Rgb>& palette = {}) {
  const DecodedRaster d = read_raster_file(path);
  std::vector<std::int32_t> ids(d.height * d.width);
  if (d.channels == 1) {
    std::copy(d.samples.begin(), d.samples.end(), ids.begin());
  } else if ((d.channels == 3 || d.channels == 4) && !palette.empty()) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Rgb c{d.samples[i * d.channels], d.samples[i * d.channels + 1], d.samples[i * d.channels + 2]};
      const auto it = std::find(palette.begin(), palette.end(), c);
      if (it == palette.end())
        throw std::runtime_error(path.string() + ": color (" + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," +
                                 std::to_string(c[2]) + ") is not in the class palette");
      ids[i] = static_cast<std::int32_t>(it - palette.begin());
    }
  } else {
    throw std::runtime_error("label raster must be single-channel class ids: " + path.string());
  }
  LabelMap m;
  try {
    m = LabelMap(d.height, d.width, num_classes, std::move(ids));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (d.indexed) m.set_palette(d.palette);
  if (!palette.empty()) m.set_palette(palette);
  return m;
}

namespace detail {
inline void write_png_buffer(const std::filesystem::path& path, png_image& img, const void* buf, const void* cmap) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf, 0, cmap))
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
}
}  // namespace detail

/// Writes an 8-bit PNG (gray for 1 band, RGB for 3+ bands, first three used).
inline void save_image_png(const std::filesystem::path& path, const RasterImage& img) {
  const std::size_t bands = img.channels() >= 3 ? 3 : 1;
  std::vector<std::uint8_t> buf(img.height() * img.width() * bands);
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < bands; ++c) buf[(y * img.width() + x) * bands + c] = quantize_u8(img.at(c, y, x));
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width());
  pi.height = static_cast<png_uint_32>(img.height());
  pi.format = bands == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  detail::write_png_buffer(path, pi, buf.data(), nullptr);
}

/// Raw class ids as a single-channel gray PNG.
inline void save_label_ids_png(const std::filesystem::path& path, const LabelMap& m) {
  std::vector<std::uint8_t> buf(m.ids().begin(), m.ids().end());
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(m.width());
  pi.height = static_cast<png_uint_32>(m.height());
  pi.format = PNG_FORMAT_GRAY;
  detail::write_png_buffer(path, pi, buf.data(), nullptr);
}

/// Thematic map as a paletted PNG; pixel values are the class ids.
inline void save_label_paletted_png(const std::filesystem::path& path, const LabelMap& m) {
  std::vector<std::uint8_t> buf(m.ids().begin(), m.ids().end());
  std::vector<std::uint8_t> cmap(256 * 3, 0);
  for (std::int32_t id = 0; id < 256; ++id) {
    const Rgb c = m.color(id);
    std::copy(c.begin(), c.end(), cmap.begin() + id * 3);
  }
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(m.width());
  pi.height = static_cast<png_uint_32>(m.height());
  pi.format = PNG_FORMAT_RGB_COLORMAP;
  pi.colormap_entries = 256;
  detail::write_png_buffer(path, pi, buf.data(), cmap.data());
}

/// Renders a label map through its palette into an RGB raster.
inline RasterImage colorize(const LabelMap& m) {
  RasterImage out(m.height(), m.width(), 3);
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x) {
      const Rgb c = m.color(m.at(y, x));
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(ch, y, x) = c[ch];
    }
  return out;
}

}  // namespace sr2seg
