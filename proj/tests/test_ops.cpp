#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gradcheck.hpp"
#include "sr2seg/ops.hpp"

using namespace sr2seg;
using sr2seg::testing::check_gradients;
using Catch::Matchers::WithinAbs;

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.vec()) v = d(rng);
  return t;
}

// Sum of elementwise products with a fixed random tensor: a scalar probe
// whose gradient w.r.t. the probed value is that tensor.
VarId probe(Tape<double>& tape, VarId x, const Tensor<double>& w) {
  const Tensor<double>& v = tape.value(x);
  double s = 0;
  for (std::size_t i = 0; i < v.numel(); ++i) s += v[i] * w[i];
  return tape.record(Tensor<double>::scalar(s), {x}, [x, w](Tape<double>& t, const Tensor<double>& gy) {
    Tensor<double> g = w;
    for (auto& e : g.vec()) e *= gy[0];
    t.accumulate(x, g);
  });
}

}  // namespace

TEST_CASE("tensor basics", "[ops]") {
  Tensor<float> t = Tensor<float>::chw(2, 3, 4, 1.5f);
  CHECK(t.numel() == 24);
  CHECK(t.at(1, 2, 3) == 1.5f);
  CHECK(shape_str(t.shape()) == "2x3x4");
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), std::invalid_argument);
  Tensor<double> d = t.cast<double>();
  CHECK(d.sum() == 36.0);
}

TEST_CASE("conv2d matches a direct loop", "[ops]") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({2, 5, 6}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto b = random_tensor({3}, rng);
  for (ConvGeometry g : {ConvGeometry{3, 1, 1}, ConvGeometry{3, 2, 1}, ConvGeometry{1, 1, 0}}) {
    Tensor<double> wk = g.kernel == 1 ? random_tensor({3, 2, 1, 1}, rng) : w;
    Tape<double> tape(false);
    const auto y = tape.value(conv2d(tape, tape.constant(x), tape.constant(wk), tape.constant(b), g));
    const std::size_t oh = g.conv_out(5), ow = g.conv_out(6), k = g.kernel;
    REQUIRE(y.shape() == Shape{3, oh, ow});
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = b[o];
          for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= 5 || ix >= 6) continue;
                s += wk[((o * 2 + c) * k + ky) * k + kx] * x.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
          CHECK_THAT(y.at(o, oy, ox), WithinAbs(s, 1e-12));
        }
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d", "[ops]") {
  // <conv(x), y> == <x, deconv(y)> for matching geometry and no bias.
  std::mt19937_64 rng(5);
  const ConvGeometry g{8, 4, 2};
  const auto x = random_tensor({2, 16, 16}, rng);
  const auto y = random_tensor({3, 4, 4}, rng);
  const auto w = random_tensor({3, 2, 8, 8}, rng);  // conv: out=3, in=2
  Tape<double> tape(false);
  const auto cx = tape.value(conv2d(tape, tape.constant(x), tape.constant(w), std::nullopt, g));
  const auto ty = tape.value(conv_transpose2d(tape, tape.constant(y), tape.constant(w), tape.constant(Tensor<double>({2})), g));
  REQUIRE(cx.shape() == y.shape());
  REQUIRE(ty.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * ty[i];
  CHECK_THAT(lhs, WithinAbs(rhs, 1e-9));
}

TEST_CASE("op gradients match finite differences", "[ops][grad]") {
  std::mt19937_64 rng(11);
  ParameterStore<double> ps;
  const auto ix = ps.add("x", random_tensor({2, 6, 6}, rng));
  const auto iw = ps.add("w", random_tensor({3, 2, 3, 3}, rng));
  const auto ib = ps.add("b", random_tensor({3}, rng));
  const auto iwt = ps.add("wt", random_tensor({3, 2, 6, 6}, rng));
  const auto ibt = ps.add("bt", random_tensor({2}, rng));
  const auto islope = ps.add("slope", Tensor<double>(Shape{1}, 0.25));
  const auto igamma = ps.add("gamma", random_tensor({3}, rng, 0.5, 1.5));
  const auto ibeta = ps.add("beta", random_tensor({3}, rng));
  const auto probe_w = random_tensor({2, 12, 12}, rng);

  SECTION("conv, prelu, norm, relu, deconv chain") {
    auto r = check_gradients(ps, [&](Tape<double>& t) {
      VarId x = t.parameter(ps[ix]);
      VarId y = conv2d(t, x, t.parameter(ps[iw]), t.parameter(ps[ib]), ConvGeometry{3, 1, 1});
      y = prelu(t, y, t.parameter(ps[islope]));
      y = channel_norm(t, y, t.parameter(ps[igamma]), t.parameter(ps[ibeta]));
      y = relu(t, add(t, y, scale(t, y, 0.5)));
      y = conv_transpose2d(t, y, t.parameter(ps[iwt]), t.parameter(ps[ibt]), ConvGeometry{6, 2, 2});
      return probe(t, y, probe_w);
    });
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.any_nonzero);
  }

  // The clamp is probed inside its range only: outside it the backward pass
  // is straight-through by design, not the derivative.
  SECTION("pool, unpool, concat, sub, clamp, l1") {
    const auto target = random_tensor({4, 6, 6}, rng);
    auto r = check_gradients(ps, [&](Tape<double>& t) {
      VarId x = t.parameter(ps[ix]);
      auto [p, idx] = max_pool(t, x);
      VarId u = max_unpool(t, scale(t, p, 2.0), idx);
      VarId c = concat(t, sub(t, x, u), clamp_straight_through(t, x, -2.0, 2.0));
      return l1_loss(t, c, t.constant(target));
    });
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }

  SECTION("cross-entropy with ignore ids and class weights") {
    std::vector<std::int32_t> labels(36);
    std::uniform_int_distribution<int> lab(0, 2);
    for (auto& l : labels) l = lab(rng);
    labels[0] = labels[7] = 255;
    for (const std::vector<double>& cw : {std::vector<double>{}, std::vector<double>{0.5, 2.0, 1.0}}) {
      auto r = check_gradients(ps, [&](Tape<double>& t) {
        VarId s = conv2d(t, t.parameter(ps[ix]), t.parameter(ps[iw]), t.parameter(ps[ib]), ConvGeometry{3, 1, 1});
        return cross_entropy(t, s, labels, {255}, cw);
      });
      INFO(r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("cross-entropy values", "[ops]") {
  Tape<double> t(false);
  // Two classes, two pixels; uniform scores give ln 2.
  VarId s = t.constant(Tensor<double>(Shape{2, 1, 2}, 0.0));
  CHECK_THAT(t.value(cross_entropy(t, s, {0, 1}, {})).item(), WithinAbs(std::log(2.0), 1e-15));
  CHECK_THROWS_AS(cross_entropy(t, s, {255, 255}, {255}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(t, s, {0, 2}, {}), std::invalid_argument);
  const auto p = softmax_channels(Tensor<double>(Shape{3, 1, 1}, std::vector<double>{1000, 1000, 0}));
  CHECK_THAT(p[0], WithinAbs(0.5, 1e-15));
  CHECK(p.all_finite());
}

TEST_CASE("clamp passes only range-restoring gradient outside the range", "[ops]") {
  Tape<double> t(true);
  ParameterStore<double> ps;
  ps.add("x", Tensor<double>(Shape{4}, std::vector<double>{-0.5, 0.5, 1.5, 1.5}));
  VarId x = t.parameter(ps[0]);
  VarId y = clamp_straight_through(t, x, 0.0, 1.0);
  CHECK(t.value(y).vec() == std::vector<double>{0.0, 0.5, 1.0, 1.0});
  // d/dy of (y0 + y1 - y2 + y3): pushes x2 down (back inside), x0 and x3 further out.
  VarId l = probe(t, y, Tensor<double>(Shape{4}, std::vector<double>{1, 1, -1, 1}));
  t.backward(l);
  CHECK(ps[0].grad.vec() == std::vector<double>{0.0, 1.0, 0.0, 1.0});
}

TEST_CASE("max pool / unpool invariants", "[ops][pool]") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor({3, 8, 10}, rng);
    auto [p, idx] = max_pool_with_indices(x);
    const auto u = max_unpool(p, idx);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 8; y += 2)
        for (std::size_t x0 = 0; x0 < 10; x0 += 2) {
          int nz = 0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) nz += u.at(c, y + dy, x0 + dx) != 0.0;
          CHECK(nz <= 1);
        }
    CHECK_THAT(u.sum(), WithinAbs(p.sum(), 1e-12));
    auto [p2, idx2] = max_pool_with_indices(u);
    for (std::size_t i = 0; i < p.numel(); ++i)
      if (p[i] > 0) CHECK(p2[i] == p[i]);
  }
  SECTION("ties go to the first element in row-major order") {
    const Tensor<double> flat(Shape{1, 2, 2}, 1.0);
    auto [p, idx] = max_pool_with_indices(flat);
    CHECK(idx.argmax[0] == 0);
    Tensor<double> tie(Shape{1, 2, 2}, std::vector<double>{0, 2, 2, 1});
    CHECK(max_pool_with_indices(tie).second.argmax[0] == 1);
  }
  SECTION("geometry errors") {
    CHECK_THROWS_AS(max_pool_with_indices(Tensor<double>(Shape{1, 3, 4})), std::invalid_argument);
    auto [p, idx] = max_pool_with_indices(Tensor<double>(Shape{1, 4, 4}));
    CHECK_THROWS_AS(max_unpool(Tensor<double>(Shape{1, 3, 2}), idx), std::invalid_argument);
  }
}

TEST_CASE("weighted sum and linearity of the combined loss", "[ops]") {
  Tape<double> t(false);
  VarId a = t.constant(Tensor<double>::scalar(0.2));
  VarId b = t.constant(Tensor<double>::scalar(0.05));
  CHECK_THAT(t.value(weighted_sum(t, a, 0.1, b, 1000.0)).item(), WithinAbs(50.02, 1e-12));
  CHECK(t.value(weighted_sum(t, a, 0.1, b, 0.0)).item() == 0.1 * 0.2);
}
