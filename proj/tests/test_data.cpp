#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "sr2seg/dataset.hpp"
#include "sr2seg/raster_io.hpp"
#include "sr2seg/resample.hpp"
#include "sr2seg/synth.hpp"

using namespace sr2seg;
namespace fs = std::filesystem;
using Catch::Matchers::WithinAbs;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("sr2seg_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RasterImage random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  RasterImage img(h, w, 3);
  std::uniform_real_distribution<double> d(0, 255);
  for (auto& v : img.tensor().vec()) v = d(rng);
  return img;
}

RasterImage random_u8_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  RasterImage img(h, w, 3);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.tensor().vec()) v = d(rng);
  return img;
}

}  // namespace

TEST_CASE("cubic kernel", "[resample]") {
  CHECK(cubic_kernel(0.0) == 1.0);
  CHECK(cubic_kernel(1.0) == 0.0);
  CHECK(cubic_kernel(2.0) == 0.0);
  CHECK_THAT(cubic_kernel(0.5), WithinAbs(0.5625, 1e-15));
  CHECK_THAT(cubic_kernel(1.5), WithinAbs(-0.0625, 1e-15));
  // Partition of unity at any phase.
  for (double f : {0.0, 0.1, 0.37, 0.5, 0.9}) {
    double s = 0;
    for (int k = -2; k <= 2; ++k) s += cubic_kernel(f - k);
    CHECK_THAT(s, WithinAbs(1.0, 1e-14));
  }
}

TEST_CASE("bicubic downsampling", "[resample]") {
  std::mt19937_64 rng(1);
  for (int r : {2, 4, 8}) {
    DegradationSpec spec;
    spec.factor = r;
    SECTION("constant images stay constant, r=" + std::to_string(r)) {
      const RasterImage lr = bicubic_downsample(RasterImage(48, 32, 3, 77.0), spec);
      CHECK(lr.height() == 48 / static_cast<std::size_t>(r));
      for (double v : lr.tensor().vec()) CHECK_THAT(v, WithinAbs(77.0, 1e-9));
    }
    SECTION("matches the dense kernel oracle, r=" + std::to_string(r)) {
      const auto img = random_image(32, 40, rng);
      const auto lib = bicubic_downsample_linear(img.tensor(), spec);
      const auto ref = oracle::bicubic_downsample_dense(img.tensor(), static_cast<std::size_t>(r));
      for (std::size_t i = 0; i < lib.numel(); ++i) CHECK_THAT(lib[i], WithinAbs(ref[i], 1e-6));
    }
  }
  SECTION("non-divisible size is rejected") {
    DegradationSpec spec;
    spec.factor = 8;
    CHECK_THROWS_AS(bicubic_downsample(RasterImage(20, 16), spec), std::invalid_argument);
  }
  SECTION("upsampling a constant is constant") {
    const auto up = bicubic_upsample(RasterImage(6, 6, 3, 10.0), 24, 24);
    for (double v : up.tensor().vec()) CHECK_THAT(v, WithinAbs(10.0, 1e-9));
  }
}

TEST_CASE("PNG and TIFF round trips", "[io]") {
  const auto dir = fresh_dir("io");
  std::mt19937_64 rng(2);
  const RasterImage img = random_u8_image(9, 13, rng);
  save_image_png(dir / "a.png", img);
  CHECK(load_image(dir / "a.png") == img);

  LabelMap lab(5, 7, 4);
  for (std::size_t i = 0; i < 35; ++i) lab.at(i / 7, i % 7) = static_cast<std::int32_t>(i % 4);
  lab.at(0, 0) = kIgnoreId;
  save_label_ids_png(dir / "ids.png", lab);
  CHECK(load_labels(dir / "ids.png", 4) == lab);
  save_label_paletted_png(dir / "pal.png", lab);
  const LabelMap back = load_labels(dir / "pal.png", 4);
  CHECK(back == lab);
  CHECK(back.palette().size() >= 4);
  CHECK(back.color(1) == LabelMap::default_color(1));

  SECTION("RGB color-coded labels map through the dataset palette") {
    const std::vector<Rgb> pal{{255, 255, 255}, {0, 0, 255}, {0, 255, 255}, {0, 255, 0}};
    lab.at(0, 0) = 2;
    lab.set_palette(pal);
    save_image_png(dir / "rgb.png", colorize(lab));
    CHECK(load_labels(dir / "rgb.png", 4, pal) == lab);
    CHECK_THROWS_AS(load_labels(dir / "rgb.png", 4, {{1, 2, 3}}), std::runtime_error);
  }

  SECTION("8-bit TIFF") {
    TIFF* t = TIFFOpen((dir / "b.tif").string().c_str(), "w");
    REQUIRE(t);
    TIFFSetField(t, TIFFTAG_IMAGEWIDTH, 13);
    TIFFSetField(t, TIFFTAG_IMAGELENGTH, 9);
    TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, 3);
    TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, 8);
    TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(t, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_RGB);
    std::vector<std::uint8_t> row(13 * 3);
    for (std::uint32_t y = 0; y < 9; ++y) {
      for (std::size_t x = 0; x < 13; ++x)
        for (std::size_t c = 0; c < 3; ++c) row[x * 3 + c] = static_cast<std::uint8_t>(img.at(c, y, x));
      TIFFWriteScanline(t, row.data(), y, 0);
    }
    TIFFClose(t);
    CHECK(load_image(dir / "b.tif") == img);
  }
  CHECK_THROWS_AS(load_image(dir / "missing.png"), std::runtime_error);
}

TEST_CASE("synthetic mosaics", "[synth]") {
  DegradationSpec spec;
  const auto a = synth_generate(7, 6, 3, 48, spec);
  const auto b = synth_generate(7, 6, 3, 48, spec);
  REQUIRE(a.samples.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.samples[i].hr == b.samples[i].hr);
    CHECK(a.samples[i].labels == b.samples[i].labels);
  }
  CHECK(a.samples[0].source_id == "synth7_0000");
  CHECK(a.samples[0].lr.height() == 12);
  const auto c = synth_generate(8, 6, 3, 48, spec);
  CHECK_FALSE(c.samples[0].hr == a.samples[0].hr);

  // 6 tiles x 16 cells = 96 cells over 3 classes: exactly 32 cells each.
  std::vector<std::size_t> area(3, 0);
  for (const auto& s : a.samples)
    for (auto id : s.labels.ids()) ++area[static_cast<std::size_t>(id)];
  CHECK(area[0] == area[1]);
  CHECK(area[1] == area[2]);

  const auto split = synth_splits(7, 4, 2, 3, 48, spec);
  for (const auto& t : split.test.samples)
    for (const auto& s : split.train.samples) CHECK(t.source_id != s.source_id);
  CHECK_THROWS_AS(synth_generate(1, 2, 3, 50, spec), std::invalid_argument);
}

TEST_CASE("tiling", "[dataset]") {
  RasterImage img(100, 70, 3, 5.0);
  LabelMap lab(100, 70, 2);
  const auto tiles = tile_image(img, lab, 32);
  CHECK(tiles.size() == 3 * 2);  // partial tiles at the border are dropped
  CHECK(tiles[0].first.height() == 32);
  CHECK_THROWS_AS(tile_image(img, LabelMap(99, 70, 2), 32), std::invalid_argument);
}

namespace {

void write_pair(const fs::path& split_dir, const std::string& stem, std::size_t size, std::int32_t fill,
                std::size_t k) {
  save_image_png(split_dir / "images" / (stem + ".png"), RasterImage(size, size, 3, 100.0));
  save_label_ids_png(split_dir / "labels" / (stem + ".png"), LabelMap(size, size, k, fill));
}

}  // namespace

TEST_CASE("dataset loading and protocol splits", "[dataset]") {
  DegradationSpec spec;
  const auto root = fresh_dir("datasets");

  SECTION("vaihingen splits by area number") {
    const auto d = root / "vaihingen" / "all";
    for (int area : {1, 3, 11, 15, 28, 30, 34}) write_pair(d, "top_mosaic_09cm_area" + std::to_string(area), 32, 0, 6);
    const auto s = load_dataset(root, "vaihingen", spec, 16);
    CHECK(s.test.samples.size() == 5 * 4);
    CHECK(s.train.samples.size() == 2 * 4);
    CHECK(s.test.excluded_classes == std::set<std::int32_t>{5});
    CHECK(s.train.samples[0].source_id == "top_mosaic_09cm_area1_r0_c0");
    for (const auto& t : s.test.samples) CHECK(t.source_id.find("area1_") == std::string::npos);
  }

  SECTION("thetford uses the directory split and excludes bare soil") {
    write_pair(root / "thetford" / "train", "scene_a", 32, 2, 7);
    write_pair(root / "thetford" / "test", "scene_b", 32, 3, 7);
    const auto s = load_dataset(root, "thetford", spec, 32);
    CHECK(s.train.samples.size() == 1);
    CHECK(s.test.samples.size() == 1);
    CHECK(s.test.excluded_classes == std::set<std::int32_t>{3});
    CHECK(s.train.samples[0].source_id == "scene_a_r0_c0");
    CHECK(s.train.samples[0].lr.height() == 8);
  }

  SECTION("coffee splits by county name") {
    write_pair(root / "coffee" / "x", "Guaxupe_01", 16, 1, 2);
    write_pair(root / "coffee" / "x", "MonteSanto_02", 16, 0, 2);
    write_pair(root / "coffee" / "x", "Guaranesia_03", 16, 1, 2);
    const auto s = load_dataset(root, "coffee", spec, 16);
    CHECK(s.train.samples.size() == 2);
    CHECK(s.test.samples.size() == 1);
    CHECK(s.test.samples[0].source_id == "Guaranesia_03_r0_c0");
  }

  SECTION("missing label file is named in the error") {
    const auto d = root / "thetford" / "train";
    save_image_png(d / "images" / "lonely.png", RasterImage(16, 16, 3));
    fs::create_directories(d / "labels");
    try {
      load_dataset(root, "thetford", spec, 16);
      FAIL("expected an error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("lonely") != std::string::npos);
    }
  }

  SECTION("label id outside the class range is rejected") {
    write_pair(root / "thetford" / "train", "bad", 16, 9, 10);
    CHECK_THROWS_AS(load_dataset(root, "thetford", spec, 16), std::runtime_error);
  }

  SECTION("unknown dataset") { CHECK_THROWS_AS(load_dataset(root, "mars", spec, 16), std::invalid_argument); }

  SECTION("synthetic reads K from classes.txt and caches LR tiles") {
    write_pair(root / "synthetic" / "train", "s0", 32, 2, 3);
    std::ofstream(root / "synthetic" / "classes.txt") << "3\n";
    const auto s = load_dataset(root, "synthetic", spec, 32);
    CHECK(s.train.num_classes == 3);
    const auto written = write_degraded_cache(root / "cache", s.train);
    REQUIRE(written.size() == 1);
    CHECK(load_image(written[0]).height() == 8);
  }
}
