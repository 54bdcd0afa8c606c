#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/image.hpp"
#include "sr2seg/raster_io.hpp"
#include "sr2seg/resample.hpp"

namespace sr2seg {

/// One training/evaluation unit: HR crop, its degraded LR counterpart and the
/// HR label map.
struct RasterSample {
  RasterImage hr;
  RasterImage lr;
  LabelMap labels;
  std::string source_id;
  std::string hr_path;
  std::string label_path;
};

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct DatasetManifest {
  std::string name;
  Split split = Split::train;
  std::vector<RasterSample> samples;
  std::set<std::int32_t> excluded_classes;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  int factor = 4;
};

struct DatasetSplits {
  DatasetManifest train;
  DatasetManifest test;
};

/// Non-overlapping row-major tile x tile crops; border remainders are dropped.
inline std::vector<std::pair<RasterImage, LabelMap>> tile_image(const RasterImage& image, const LabelMap& labels,
                                                                std::size_t tile) {
  if (tile == 0) throw std::invalid_argument("tile size must be >= 1");
  if (image.height() != labels.height() || image.width() != labels.width())
    throw std::invalid_argument("tile_image: image is " + std::to_string(image.height()) + "x" +
                                std::to_string(image.width()) + " but labels are " +
                                std::to_string(labels.height()) + "x" + std::to_string(labels.width()));
  std::vector<std::pair<RasterImage, LabelMap>> tiles;
  const std::size_t rows = image.height() / tile, cols = image.width() / tile;
  for (std::size_t ty = 0; ty < rows; ++ty)
    for (std::size_t tx = 0; tx < cols; ++tx) {
      RasterImage crop(tile, tile, image.channels());
      LabelMap lab(tile, tile, labels.num_classes());
      lab.set_palette(labels.palette());
      for (std::size_t y = 0; y < tile; ++y)
        for (std::size_t x = 0; x < tile; ++x) {
          for (std::size_t c = 0; c < image.channels(); ++c) crop.at(c, y, x) = image.at(c, ty * tile + y, tx * tile + x);
          lab.at(y, x) = labels.at(ty * tile + y, tx * tile + x);
        }
      tiles.emplace_back(std::move(crop), std::move(lab));
    }
  return tiles;
}

/// Builds a sample from an HR crop; LR = bicubic_downsample(hr).
inline RasterSample make_sample(RasterImage hr, LabelMap labels, std::string source_id, const DegradationSpec& spec) {
  RasterSample s;
  s.lr = bicubic_downsample(hr, spec);
  s.hr = std::move(hr);
  s.labels = std::move(labels);
  s.source_id = std::move(source_id);
  return s;
}

/// Static description of a supported dataset.
struct DatasetInfo {
  std::string id;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::set<std::int32_t> excluded;
  std::vector<Rgb> palette;
};

inline DatasetInfo dataset_info(const std::string& id) {
  if (id == "coffee") return {id, 2, {"non-coffee", "coffee"}, {}, {{0, 0, 0}, {255, 255, 255}}};
  if (id == "vaihingen")
    return {id, 6, {"impervious", "building", "low-vegetation", "tree", "car", "clutter"}, {5},
            {{255, 255, 255}, {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};
  if (id == "thetford")
    return {id, 7, {"trees", "vegetation", "road", "bare-soil", "red-roof", "gray-roof", "concrete-roof"}, {3},
            {{0, 100, 0}, {0, 255, 0}, {128, 128, 128}, {160, 82, 45}, {255, 0, 0}, {90, 90, 90}, {220, 220, 220}}};
  if (id == "synthetic") return {id, 0, {}, {}, {}};
  throw std::invalid_argument("unknown dataset id: " + id);
}

inline const std::set<int> kVaihingenTestAreas{11, 15, 28, 30, 34};

namespace detail {

inline std::string ascii_lower_alnum(const std::string& s) {
  std::string out;
  for (unsigned char c : s)
    if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
  return out;
}

// Protocol split for datasets whose split is fixed by scene identity; nullopt
// means "use the directory split".
inline std::optional<Split> protocol_split(const std::string& dataset, const std::string& stem) {
  if (dataset == "vaihingen") {
    static const std::regex area(R"((?:area)?[_-]?(\d+)\D*$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_search(stem, m, area)) throw std::runtime_error("vaihingen file without an area number: " + stem);
    return kVaihingenTestAreas.count(std::stoi(m[1].str())) ? Split::test : Split::train;
  }
  if (dataset == "coffee") {
    const std::string k = ascii_lower_alnum(stem);
    if (k.rfind("guaxup", 0) == 0 || k.rfind("montesanto", 0) == 0) return Split::train;
    if (k.rfind("guaran", 0) == 0) return Split::test;
    throw std::runtime_error("coffee file not attributable to Guaxupe, Monte Santo or Guaranesia: " + stem);
  }
  return std::nullopt;
}

inline bool is_raster(const std::filesystem::path& p) {
  const auto e = lower_ext(p);
  return e == ".png" || e == ".tif" || e == ".tiff";
}

inline std::filesystem::path find_label(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* ext : {".png", ".tif", ".tiff"}) {
    auto p = dir / (stem + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return {};
}

inline std::size_t read_synthetic_classes(const std::filesystem::path& root) {
  std::ifstream in(root / "classes.txt");
  std::size_t k = 0;
  if (!(in >> k) || k < 2) throw std::runtime_error("synthetic dataset needs classes.txt with K >= 2 under " + root.string());
  return k;
}

}  // namespace detail

/// Scans `<root>/<name>/<split>/{images,labels}`, tiles every image and
/// degrades each tile. Vaihingen and Coffee are split by scene identity;
/// the other datasets use the directory split.
inline DatasetSplits load_dataset(const std::filesystem::path& root, const std::string& name,
                                  const DegradationSpec& spec, std::size_t tile = 480) {
  DatasetInfo info = dataset_info(name);
  const auto base = root / name;
  if (!std::filesystem::is_directory(base)) throw std::runtime_error("dataset directory not found: " + base.string());
  if (name == "synthetic") info.num_classes = detail::read_synthetic_classes(base);
  if (tile % static_cast<std::size_t>(spec.factor))
    throw std::invalid_argument("degradation factor must divide the tile size");

  DatasetSplits out;
  for (auto* m : {&out.train, &out.test}) {
    m->name = name;
    m->num_classes = info.num_classes;
    m->class_names = info.class_names;
    m->excluded_classes = info.excluded;
    m->factor = spec.factor;
  }
  out.train.split = Split::train;
  out.test.split = Split::test;

  std::vector<std::filesystem::path> split_dirs;
  for (const auto& e : std::filesystem::directory_iterator(base))
    if (e.is_directory() && std::filesystem::is_directory(e.path() / "images")) split_dirs.push_back(e.path());
  std::sort(split_dirs.begin(), split_dirs.end());

  std::size_t found = 0;
  for (const auto& sd : split_dirs) {
    const std::string dir_split = sd.filename().string();
    std::vector<std::filesystem::path> images;
    for (const auto& e : std::filesystem::directory_iterator(sd / "images"))
      if (e.is_regular_file() && detail::is_raster(e.path())) images.push_back(e.path());
    std::sort(images.begin(), images.end());
    for (const auto& img_path : images) {
      ++found;
      const std::string stem = img_path.stem().string();
      const auto lab_path = detail::find_label(sd / "labels", stem);
      if (lab_path.empty())
        throw std::runtime_error("missing label file for " + img_path.string() + " (expected " +
                                 (sd / "labels" / (stem + ".png")).string() + ")");
      Split split;
      if (auto p = detail::protocol_split(name, stem)) {
        split = *p;
      } else if (dir_split == "train") {
        split = Split::train;
      } else if (dir_split == "test") {
        split = Split::test;
      } else {
        throw std::runtime_error("split directory must be 'train' or 'test' for " + name + ": " + sd.string());
      }
      RasterImage image = load_image(img_path);
      LabelMap labels = load_labels(lab_path, info.num_classes, info.palette);
      auto tiles = tile_image(image, labels, tile);
      DatasetManifest& m = split == Split::train ? out.train : out.test;
      for (std::size_t i = 0; i < tiles.size(); ++i) {
        const std::size_t cols = image.width() / tile;
        std::string id = stem + "_r" + std::to_string(i / cols) + "_c" + std::to_string(i % cols);
        RasterSample s = make_sample(std::move(tiles[i].first), std::move(tiles[i].second), std::move(id), spec);
        s.hr_path = img_path.string();
        s.label_path = lab_path.string();
        m.samples.push_back(std::move(s));
      }
    }
  }
  if (found == 0) throw std::runtime_error("no images found under " + base.string());
  for (auto* m : {&out.train, &out.test})
    std::sort(m->samples.begin(), m->samples.end(),
              [](const RasterSample& a, const RasterSample& b) { return a.source_id < b.source_id; });
  std::set<std::string> train_ids;
  for (const auto& s : out.train.samples) train_ids.insert(s.source_id);
  for (const auto& s : out.test.samples)
    if (train_ids.count(s.source_id)) throw std::runtime_error("source id in both splits: " + s.source_id);
  return out;
}

/// `source_id<TAB>hr_path<TAB>label_path` per sample.
inline void write_manifest_tsv(const std::filesystem::path& path, const DatasetManifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& s : m.samples) out << s.source_id << '\t' << s.hr_path << '\t' << s.label_path << '\n';
}

/// Writes every LR tile to `<cache_root>/x<r>/<source_id>.png`; returns the paths.
inline std::vector<std::filesystem::path> write_degraded_cache(const std::filesystem::path& cache_root,
                                                               const DatasetManifest& m) {
  std::vector<std::filesystem::path> paths;
  for (const auto& s : m.samples) {
    auto p = cache_root / ("x" + std::to_string(m.factor)) / (s.source_id + ".png");
    save_image_png(p, s.lr);
    paths.push_back(p);
  }
  return paths;
}

}  // namespace sr2seg
