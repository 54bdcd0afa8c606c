#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "sr2seg/metrics.hpp"
#include "sr2seg/raster_io.hpp"
#include "sr2seg/trainer.hpp"

namespace sr2seg {

inline constexpr const char* kReportHeader = "dataset,degradation,method,psnr,acc,norm_acc,iou,kappa";

namespace detail {

inline std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string cell(const std::optional<double>& v) { return v ? fixed(*v) : "n/a"; }

inline std::string psnr_cell(const std::optional<Psnr>& p) { return p ? p->str() : "n/a"; }

inline int method_rank(const std::string& method) {
  if (method == "LR") return 0;
  if (method == "End-to-end") return 1;
  if (method == "HR") return 2;
  return 3;
}

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline std::optional<double> json_opt(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace detail

/// Row order of comparison tables: dataset, then factor, then LR < End-to-end < HR.
inline std::vector<MetricsReport> sorted_reports(std::vector<MetricsReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const MetricsReport& a, const MetricsReport& b) {
    return std::make_tuple(a.dataset, a.degradation, detail::method_rank(a.method)) <
           std::make_tuple(b.dataset, b.degradation, detail::method_rank(b.method));
  });
  return reports;
}

/// CSV table. With more than one report, columns giving the change against
/// the LR row of the same dataset and factor are appended.
inline std::string report_table(const std::vector<MetricsReport>& input) {
  if (input.empty()) throw std::invalid_argument("report table needs at least one report");
  for (const auto& r : input)
    for (const auto& o : input)
      if (r.dataset == o.dataset && r.confusion.num_classes() != o.confusion.num_classes())
        throw std::invalid_argument("cannot compare runs on " + r.dataset + ": class counts " +
                                    std::to_string(r.confusion.num_classes()) + " and " +
                                    std::to_string(o.confusion.num_classes()) + " differ");
  const auto reports = sorted_reports(input);
  const bool compare = reports.size() > 1;
  std::ostringstream os;
  os << kReportHeader;
  if (compare) os << ",d_acc,d_norm_acc,d_iou,d_kappa";
  os << '\n';
  for (const auto& r : reports) {
    os << r.dataset << ',' << r.degradation << "x," << r.method << ',' << detail::psnr_cell(r.psnr) << ','
       << detail::fixed(r.seg.acc) << ',' << detail::fixed(r.seg.norm_acc) << ',' << detail::fixed(r.seg.miou) << ','
       << detail::cell(r.seg.kappa);
    if (compare) {
      const MetricsReport* base = nullptr;
      for (const auto& o : reports)
        if (o.dataset == r.dataset && o.degradation == r.degradation && o.method == "LR") base = &o;
      if (!base) {
        os << ",n/a,n/a,n/a,n/a";
      } else {
        std::optional<double> dk;
        if (r.seg.kappa && base->seg.kappa) dk = *r.seg.kappa - *base->seg.kappa;
        os << ',' << detail::fixed(r.seg.acc - base->seg.acc) << ','
           << detail::fixed(r.seg.norm_acc - base->seg.norm_acc) << ',' << detail::fixed(r.seg.miou - base->seg.miou)
           << ',' << detail::cell(dk);
      }
    }
    os << '\n';
  }
  return os.str();
}

/// Confusion matrix as CSV, rows = truth. Row-normalized cells use 4 decimals;
/// rows with no pixels print n/a.
inline std::string confusion_csv(const MetricsReport& r, bool normalized) {
  const ConfusionMatrix& cm = r.confusion;
  const std::size_t k = cm.num_classes();
  auto name = [&](std::size_t c) { return c < r.class_names.size() ? r.class_names[c] : "class" + std::to_string(c); };
  std::ostringstream os;
  os << "truth\\pred";
  for (std::size_t c = 0; c < k; ++c) os << ',' << name(c);
  os << '\n';
  for (std::size_t t = 0; t < k; ++t) {
    if (r.excluded_classes.count(static_cast<std::int32_t>(t))) continue;
    os << name(t);
    const std::uint64_t rs = cm.row_sum(t);
    for (std::size_t p = 0; p < k; ++p) {
      os << ',';
      if (!normalized) {
        os << cm.at(t, p);
      } else if (rs == 0) {
        os << "n/a";
      } else {
        os << detail::fixed(static_cast<double>(cm.at(t, p)) / static_cast<double>(rs));
      }
    }
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["degradation"] = r.degradation;
  j["method"] = r.method;
  if (!r.psnr)
    j["psnr"] = nullptr;
  else if (r.psnr->identical)
    j["psnr"] = "identical";
  else
    j["psnr"] = r.psnr->db;
  j["acc"] = r.seg.acc;
  j["norm_acc"] = r.seg.norm_acc;
  j["miou"] = r.seg.miou;
  j["kappa"] = detail::opt_json(r.seg.kappa);
  nlohmann::json recall = nlohmann::json::array(), iou = nlohmann::json::array();
  for (const auto& v : r.seg.recall) recall.push_back(detail::opt_json(v));
  for (const auto& v : r.seg.iou) iou.push_back(detail::opt_json(v));
  j["recall"] = recall;
  j["class_iou"] = iou;
  j["num_classes"] = r.confusion.num_classes();
  j["confusion"] = r.confusion.counts();
  j["class_names"] = r.class_names;
  j["excluded_classes"] = r.excluded_classes;
  j["metadata"] = r.metadata;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.degradation = j.at("degradation").get<int>();
  r.method = j.at("method").get<std::string>();
  const auto& p = j.at("psnr");
  if (p.is_string())
    r.psnr = Psnr{true, 0.0};
  else if (p.is_number())
    r.psnr = Psnr{false, p.get<double>()};
  const std::size_t k = j.at("num_classes").get<std::size_t>();
  r.confusion = ConfusionMatrix(k);
  const auto counts = j.at("confusion").get<std::vector<std::uint64_t>>();
  if (counts.size() != k * k) throw std::runtime_error("metrics file: confusion matrix has wrong size");
  for (std::size_t i = 0; i < k * k; ++i) r.confusion.at(i / k, i % k) = counts[i];
  r.seg = compute_metrics(r.confusion);
  r.class_names = j.at("class_names").get<std::vector<std::string>>();
  r.excluded_classes = j.at("excluded_classes").get<std::set<std::int32_t>>();
  r.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  return r;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write on " + path.string());
}

inline MetricsReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics file " + path.string());
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

/// HR | LR-upsampled | reconstruction | truth map | predicted map, at native
/// resolution with a 4-pixel white gutter.
inline RasterImage compose_panel(const PanelSet& p) {
  const std::vector<RasterImage> parts{p.hr, p.lr_upsampled, p.reconstruction, colorize(p.truth), colorize(p.prediction)};
  constexpr std::size_t gutter = 4;
  const std::size_t h = p.hr.height(), w = p.hr.width();
  RasterImage out(h, parts.size() * w + (parts.size() - 1) * gutter, 3, 255.0);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const RasterImage& part = parts[i];
    if (part.height() != h || part.width() != w) throw std::invalid_argument("panel parts differ in size");
    const std::size_t x0 = i * (w + gutter);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out.at(c, y, x0 + x) = part.at(std::min(c, part.channels() - 1), y, x);
  }
  return out;
}

/// Writes table, metrics.json, confusion CSVs, predicted maps and panels for
/// one evaluation under `dir`; returns every path written.
inline std::vector<std::filesystem::path> emit_evaluation(const std::filesystem::path& dir, const Evaluation& ev) {
  std::vector<std::filesystem::path> out;
  auto text = [&](const std::filesystem::path& p, const std::string& s) {
    write_text_file(p, s);
    out.push_back(p);
  };
  text(dir / "report.csv", report_table({ev.report}));
  text(dir / "metrics.json", report_to_json(ev.report).dump(2) + "\n");
  text(dir / "confusion_counts.csv", confusion_csv(ev.report, false));
  text(dir / "confusion_normalized.csv", confusion_csv(ev.report, true));
  for (const auto& [id, map] : ev.predictions) {
    const auto color = dir / "maps" / (id + ".png");
    const auto ids = dir / "maps" / (id + "_ids.png");
    save_label_paletted_png(color, map);
    save_label_ids_png(ids, map);
    out.push_back(color);
    out.push_back(ids);
  }
  for (const auto& p : ev.panels) {
    const auto path = dir / "panels" / (p.source_id + ".png");
    save_image_png(path, compose_panel(p));
    out.push_back(path);
  }
  return out;
}

/// Comparison table plus per-run row-normalized confusion matrices.
inline std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir,
                                                      const std::vector<MetricsReport>& reports) {
  std::vector<std::filesystem::path> out;
  const std::string table = report_table(reports);
  write_text_file(dir / "comparison.csv", table);
  out.push_back(dir / "comparison.csv");
  const auto sorted = sorted_reports(reports);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& r = sorted[i];
    std::string method = r.method;
    std::replace(method.begin(), method.end(), ' ', '_');
    char name[160];
    std::snprintf(name, sizeof name, "%02zu_%s_x%d_%s_confusion.csv", i + 1, r.dataset.c_str(), r.degradation,
                  method.c_str());
    write_text_file(dir / name, confusion_csv(r, true));
    out.push_back(dir / name);
  }
  return out;
}

}  // namespace sr2seg
