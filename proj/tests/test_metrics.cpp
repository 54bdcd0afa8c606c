#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "sr2seg/metrics.hpp"

using namespace sr2seg;
using Catch::Matchers::WithinAbs;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t p = 0; p < rows.size(); ++p) cm.at(t, p) = rows[t][p];
  return cm;
}

}  // namespace

TEST_CASE("PSNR closed forms", "[metrics]") {
  RasterImage a(4, 5, 3, 100.0);
  CHECK(psnr(a, a).identical);
  CHECK(psnr(a, a).str() == "identical");
  RasterImage b(4, 5, 3, 116.0);
  CHECK_THAT(psnr(a, b).db, WithinAbs(20.0 * std::log10(255.0 / 16.0), 1e-9));
  CHECK_THAT(psnr(a, b).db, WithinAbs(24.048, 5e-4));
  CHECK_THAT(psnr(RasterImage(2, 2, 3, 0.0), RasterImage(2, 2, 3, 255.0)).db, WithinAbs(0.0, 1e-12));
  CHECK_THROWS_AS(psnr(a, RasterImage(4, 4, 3)), std::invalid_argument);
  // More error, lower PSNR; permuting both images identically changes nothing.
  RasterImage c = b;
  c.at(0, 0, 0) = 200.0;
  CHECK(psnr(a, c).db < psnr(a, b).db);
  RasterImage ap = a, cp(4, 5, 3, 100.0);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) cp.at(ch, y, x) = c.at(ch, 3 - y, 4 - x);
  CHECK(psnr(ap, cp).db == Catch::Approx(psnr(a, c).db).epsilon(1e-12));
}

TEST_CASE("confusion accumulation", "[metrics]") {
  ConfusionMatrix cm(3);
  cm.accumulate(std::vector<std::int32_t>(10, 2), std::vector<std::int32_t>(10, 2), {});
  CHECK(cm.at(2, 2) == 10);
  CHECK(cm.total() == 10);
  const ConfusionMatrix before = cm;
  cm.accumulate({0, 1}, {1, 1}, {1});  // all excluded
  CHECK(cm == before);
  cm.accumulate({0, 0}, {255, 1}, {255});  // ignore id skipped, counted pixel lands off-diagonal
  CHECK(cm.at(1, 0) == 1);
  CHECK_THROWS_AS(cm.accumulate({3}, {0}, {}), std::invalid_argument);
  CHECK_THROWS_AS(cm.accumulate({0, 1}, {0}, {}), std::invalid_argument);

  SECTION("random pair equals a per-pixel tally; merging is order-free") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> d(0, 3);
    std::vector<std::int32_t> pred(256), truth(256);
    for (std::size_t i = 0; i < 256; ++i) {
      pred[i] = d(rng);
      truth[i] = d(rng);
    }
    ConfusionMatrix whole(4);
    whole.accumulate(pred, truth, {});
    std::vector<std::uint64_t> tally(16, 0);
    for (std::size_t i = 0; i < 256; ++i) ++tally[static_cast<std::size_t>(truth[i] * 4 + pred[i])];
    CHECK(whole.counts() == tally);
    ConfusionMatrix parts(4), first(4), second(4);
    first.accumulate({pred.begin() + 100, pred.end()}, {truth.begin() + 100, truth.end()}, {});
    second.accumulate({pred.begin(), pred.begin() + 100}, {truth.begin(), truth.begin() + 100}, {});
    parts += first;
    parts += second;
    CHECK(parts == whole);
  }
}

TEST_CASE("hand-computed metrics", "[metrics]") {
  const auto m = compute_metrics(from_rows({{8, 2}, {1, 9}}));
  CHECK_THAT(m.acc, WithinAbs(0.85, 1e-15));
  CHECK_THAT(m.norm_acc, WithinAbs(0.85, 1e-15));
  CHECK_THAT(m.miou, WithinAbs((8.0 / 11 + 9.0 / 12) / 2, 1e-15));
  REQUIRE(m.kappa);
  CHECK_THAT(*m.kappa, WithinAbs(0.7, 1e-12));

  const auto perfect = compute_metrics(from_rows({{5, 0, 0}, {0, 3, 0}, {0, 0, 0}}));
  CHECK(perfect.acc == 1.0);
  CHECK(perfect.norm_acc == 1.0);
  CHECK(perfect.miou == 1.0);
  CHECK(*perfect.kappa == 1.0);
  CHECK_FALSE(perfect.recall[2].has_value());  // absent class skipped, not zero

  CHECK_FALSE(compute_metrics(from_rows({{7, 0}, {0, 0}})).kappa.has_value());
  CHECK_THROWS_AS(compute_metrics(ConfusionMatrix(3)), std::invalid_argument);
}

TEST_CASE("metrics agree with the pixel-list oracle and obey their bounds", "[metrics]") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 2 + rng() % 4;
    ConfusionMatrix cm(k);
    std::uniform_int_distribution<int> cnt(0, 6);
    for (std::size_t i = 0; i < k * k; ++i) cm.at(i / k, i % k) = rng() % 3 ? static_cast<std::uint64_t>(cnt(rng)) : 0;
    if (cm.total() == 0) cm.at(0, 0) = 1;
    const auto m = compute_metrics(cm);
    const auto o = oracle::brute_force_metrics(cm.counts(), k);
    CHECK_THAT(m.acc, WithinAbs(o.acc, 1e-12));
    CHECK_THAT(m.norm_acc, WithinAbs(o.norm_acc, 1e-12));
    CHECK_THAT(m.miou, WithinAbs(o.miou, 1e-12));
    REQUIRE(m.kappa.has_value() == o.kappa.has_value());
    if (m.kappa) CHECK_THAT(*m.kappa, WithinAbs(*o.kappa, 1e-12));
    for (double v : {m.acc, m.norm_acc, m.miou}) CHECK((v >= 0.0 && v <= 1.0));
    for (std::size_t c = 0; c < k; ++c)
      if (m.iou[c] && m.recall[c]) CHECK(*m.iou[c] <= *m.recall[c] + 1e-15);
    const auto t = compute_metrics(cm.transposed());
    CHECK_THAT(t.acc, WithinAbs(m.acc, 1e-15));
    if (m.kappa) CHECK_THAT(*t.kappa, WithinAbs(*m.kappa, 1e-12));
    bool diagonal = true;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) diagonal = diagonal && (i == j || cm.at(i, j) == 0);
    if (m.kappa) CHECK((std::abs(*m.kappa - 1.0) < 1e-12) == diagonal);
  }
}
