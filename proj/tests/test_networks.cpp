#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gradcheck.hpp"
#include "sr2seg/dbpn.hpp"
#include "sr2seg/resample.hpp"
#include "sr2seg/segnet.hpp"

using namespace sr2seg;
using sr2seg::testing::check_gradients;

namespace {

Tensor<double> random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0, 1);
  Tensor<double> t(Shape{c, h, w});
  for (auto& v : t.vec()) v = d(rng);
  return t;
}

SRConfig mini_sr(int r, std::size_t stages) {
  SRConfig c;
  c.factor = r;
  c.stages = stages;
  c.feat0 = 8;
  c.nr = 4;
  return c;
}

SegConfig mini_seg(std::size_t k) {
  SegConfig c;
  c.num_classes = k;
  c.encoder_plan = {{1, 4}, {1, 8}};
  return c;
}

}  // namespace

TEST_CASE("SR output geometry", "[networks]") {
  for (int r : {2, 4, 8})
    for (std::size_t stages : {1, 2, 3}) {
      Dbpn<float> net(mini_sr(r, stages), 1);
      Tape<float> tape(false);
      const auto out = net.forward(tape, tape.constant(random_image(3, 6, 5, 2).cast<float>()));
      const auto& v = tape.value(out.raw);
      CHECK(v.shape() == Shape{3, 6 * static_cast<std::size_t>(r), 5 * static_cast<std::size_t>(r)});
      for (float x : tape.value(out.clamped).vec()) CHECK((x >= 0.0f && x <= 1.0f));
    }
}

TEST_CASE("SR structure and errors", "[networks]") {
  Dbpn<double> net(mini_sr(4, 4), 3);
  auto& p = net.params();
  CHECK(p.contains("feat0.weight"));
  CHECK(p.contains("up1.conv1.weight"));
  CHECK_FALSE(p.contains("up1.compress.weight"));
  CHECK_FALSE(p.contains("down1.compress.weight"));
  CHECK(p.contains("down2.compress.weight"));
  CHECK(p.contains("up3.compress.weight"));
  CHECK_FALSE(p.contains("down4.conv1.weight"));  // T up units, T-1 down units
  CHECK(p.at("up1.conv1.weight").value.shape() == Shape{4, 4, 8, 8});   // transposed: in, out, k, k
  CHECK(p.at("down1.conv1.weight").value.shape() == Shape{4, 4, 8, 8});
  CHECK(p.at("up3.compress.weight").value.shape() == Shape{4, 8, 1, 1});  // two LR maps in
  CHECK(p.at("recon.weight").value.shape() == Shape{3, 16, 3, 3});
  CHECK(p.at("up1.conv1.prelu").value[0] == 0.25);

  Tape<double> tape(false);
  CHECK_THROWS_AS(net.forward(tape, tape.constant(Tensor<double>(Shape{1, 4, 4}))), std::invalid_argument);
  CHECK_THROWS_AS(net.down_projection(tape, net.down_unit(0), tape.constant(Tensor<double>(Shape{4, 10, 12}))),
                  std::invalid_argument);
  SRConfig bad = mini_sr(3, 1);
  CHECK_THROWS_AS(Dbpn<double>(bad, 0), std::invalid_argument);
  CHECK(mini_sr(8, 1).projection().kernel == 12);

  // Same seed, same weights.
  Dbpn<double> again(mini_sr(4, 4), 3);
  CHECK(again.params().checksum() == p.checksum());
}

TEST_CASE("segmentation output geometry and argmax", "[networks]") {
  SegNet<float> net(mini_seg(3), 4);
  Tape<float> tape(false);
  const auto s = tape.value(net.forward(tape, tape.constant(random_image(3, 16, 12, 5).cast<float>())));
  CHECK(s.shape() == Shape{3, 16, 12});
  CHECK_THROWS_AS(net.forward(tape, tape.constant(Tensor<float>(Shape{3, 10, 12}))), std::invalid_argument);
  const Tensor<float> scores(Shape{3, 1, 2}, std::vector<float>{0, 5, 1, 1, 2, 1});
  CHECK(SegNet<float>::predict(scores) == std::vector<std::int32_t>{2, 0});
  SegConfig bad = mini_seg(3);
  bad.class_weights = {1, 2};
  CHECK_THROWS_AS(SegNet<float>(bad, 0), std::invalid_argument);
}

TEST_CASE("segmentation is equivariant to shifts by its pooling period", "[networks]") {
  // A spatially periodic input with period 2^stages yields periodic scores
  // away from the zero-padded border.
  SegNet<double> net(mini_seg(2), 6);
  const std::size_t period = net.config().divisor(), n = 64, margin = 20;
  const auto patch = random_image(3, period, period, 7);
  Tensor<double> img(Shape{3, n, n});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) img.at(c, y, x) = patch.at(c, y % period, x % period);
  Tape<double> tape(false);
  const auto s = tape.value(net.forward(tape, tape.constant(img)));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = margin; y + period < n - margin; ++y)
      for (std::size_t x = margin; x + period < n - margin; ++x) {
        CHECK(std::abs(s.at(c, y, x) - s.at(c, y + period, x)) < 1e-9);
        CHECK(std::abs(s.at(c, y, x) - s.at(c, y, x + period)) < 1e-9);
      }
}

TEST_CASE("network gradients match finite differences", "[networks][grad]") {
  SECTION("SR under L1") {
    Dbpn<double> net(mini_sr(4, 2), 8);
    const auto lr = random_image(3, 3, 3, 9), hr = random_image(3, 12, 12, 10);
    auto r = check_gradients(net.params(), [&](Tape<double>& t) {
      return l1_loss(t, net.forward(t, t.constant(lr)).raw, t.constant(hr));
    }, 1e-6, 8);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.any_nonzero);
  }
  SECTION("segmentation under cross-entropy") {
    SegNet<double> net(mini_seg(3), 11);
    const auto img = random_image(3, 8, 8, 12);
    std::vector<std::int32_t> labels(64);
    for (std::size_t i = 0; i < 64; ++i) labels[i] = static_cast<std::int32_t>((i / 8 + i % 3) % 3);
    auto r = check_gradients(net.params(), [&](Tape<double>& t) {
      return cross_entropy(t, net.forward(t, t.constant(img)), labels, {255});
    }, 1e-6, 8);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("residual SR adds the bicubic upsampling", "[networks]") {
  SRConfig c = mini_sr(4, 2);
  c.residual = true;
  Dbpn<double> net(c, 13);
  for (auto& v : net.params().at("recon.weight").value.vec()) v = 0;
  const auto lr = random_image(3, 5, 4, 14);
  Tape<double> tape(false);
  const auto& out = tape.value(net.forward(tape, tape.constant(lr)).raw);
  RasterImage img(lr);
  for (auto& v : img.tensor().vec()) v *= 255;
  const auto up = bicubic_upsample(img, 20, 16);
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK_THAT(out[i] * 255, Catch::Matchers::WithinAbs(up.tensor()[i], 1e-9));
}
