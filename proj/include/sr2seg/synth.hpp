#pragma once

// Procedural labeled scenes standing in for licensed remote-sensing rasters.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/dataset.hpp"

namespace sr2seg {

struct SynthOptions {
  std::size_t cells_per_side = 4;
  double stripe_amplitude = 45.0;
  double noise_amplitude = 12.0;
};

namespace detail {

struct ClassTexture {
  double angle;
  double period;
  double mean;
  std::array<double, 3> mix;
};

inline ClassTexture class_texture(std::size_t k, std::size_t num_classes) {
  const double kk = static_cast<double>(k);
  const double angle = std::numbers::pi * kk / static_cast<double>(num_classes);
  const double period = 12.0 + 8.0 * static_cast<double>(k % 4);
  const double mean = 118.0 + 6.0 * (kk - 0.5 * static_cast<double>(num_classes - 1));
  std::array<double, 3> mix{};
  for (std::size_t c = 0; c < 3; ++c)
    mix[c] = 0.7 + 0.3 * std::cos(2.0 * std::numbers::pi * (kk / static_cast<double>(num_classes) + static_cast<double>(c) / 3.0));
  return {angle, period, mean, mix};
}

template <class Rng>
void fisher_yates(std::vector<std::int32_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

}  // namespace detail

/// Deterministic mosaic dataset: each tile is a grid of cells, each cell one
/// class with its own oriented stripe texture over shared band-limited noise.
/// Cell classes are drawn from one balanced deck for the whole manifest, and
/// the mosaic is cyclically shifted per tile, so class areas stay balanced.
inline DatasetManifest synth_generate(std::uint64_t seed, std::size_t n, std::size_t num_classes, std::size_t tile,
                                      const DegradationSpec& spec, const SynthOptions& opt = {}) {
  if (num_classes < 2) throw std::invalid_argument("synth_generate: need at least two classes");
  if (tile == 0 || tile % static_cast<std::size_t>(spec.factor))
    throw std::invalid_argument("synth_generate: tile must be a positive multiple of the degradation factor");
  const std::size_t g = opt.cells_per_side;
  if (g == 0 || g > tile) throw std::invalid_argument("synth_generate: bad cell grid");

  std::mt19937_64 rng(seed);
  std::vector<std::int32_t> deck(n * g * g);
  for (std::size_t i = 0; i < deck.size(); ++i) deck[i] = static_cast<std::int32_t>(i % num_classes);
  detail::fisher_yates(deck, rng);

  std::vector<detail::ClassTexture> tex;
  for (std::size_t k = 0; k < num_classes; ++k) tex.push_back(detail::class_texture(k, num_classes));

  DatasetManifest m;
  m.name = "synthetic";
  m.split = Split::train;
  m.num_classes = num_classes;
  m.factor = spec.factor;
  for (std::size_t k = 0; k < num_classes; ++k) m.class_names.push_back("class" + std::to_string(k));

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t s = 0; s < n; ++s) {
    const auto dx = static_cast<std::size_t>(unif(rng) * static_cast<double>(tile)) % tile;
    const auto dy = static_cast<std::size_t>(unif(rng) * static_cast<double>(tile)) % tile;
    std::vector<double> phase(num_classes);
    for (auto& p : phase) p = unif(rng) * two_pi;
    struct Wave { double fx, fy, ph, amp; };
    std::vector<Wave> noise(6);
    for (auto& wv : noise) {
      const double ang = unif(rng) * std::numbers::pi;
      const double period = 5.0 + 11.0 * unif(rng);
      wv = {std::cos(ang) / period, std::sin(ang) / period, unif(rng) * two_pi, 0.5 + 0.5 * unif(rng)};
    }
    double amp_sum = 0;
    for (const auto& wv : noise) amp_sum += wv.amp;

    RasterImage hr(tile, tile, 3);
    LabelMap labels(tile, tile, num_classes);
    for (std::size_t y = 0; y < tile; ++y)
      for (std::size_t x = 0; x < tile; ++x) {
        const std::size_t cy = ((y + dy) % tile) * g / tile, cx = ((x + dx) % tile) * g / tile;
        const std::int32_t k = deck[s * g * g + cy * g + cx];
        labels.at(y, x) = k;
        const auto& t = tex[static_cast<std::size_t>(k)];
        const double fx = static_cast<double>(x), fy = static_cast<double>(y);
        const double u = fx * std::cos(t.angle) + fy * std::sin(t.angle);
        const double stripe = std::sin(two_pi * u / t.period + phase[static_cast<std::size_t>(k)]);
        double nz = 0;
        for (const auto& wv : noise) nz += wv.amp * std::sin(two_pi * (wv.fx * fx + wv.fy * fy) + wv.ph);
        nz *= opt.noise_amplitude / amp_sum;
        for (std::size_t c = 0; c < 3; ++c)
          hr.at(c, y, x) = std::clamp(t.mean + opt.stripe_amplitude * t.mix[c] * stripe + nz, 0.0, 255.0);
      }
    char id[64];
    std::snprintf(id, sizeof id, "synth%llu_%04zu", static_cast<unsigned long long>(seed), s);
    m.samples.push_back(make_sample(std::move(hr), std::move(labels), id, spec));
  }
  return m;
}

/// Train/test pair with disjoint source ids (the test set uses a derived seed).
inline DatasetSplits synth_splits(std::uint64_t seed, std::size_t n_train, std::size_t n_test, std::size_t num_classes,
                                  std::size_t tile, const DegradationSpec& spec) {
  DatasetSplits d;
  d.train = synth_generate(seed, n_train, num_classes, tile, spec);
  d.test = synth_generate(seed ^ 0x9E3779B97F4A7C15ull, n_test, num_classes, tile, spec);
  d.test.split = Split::test;
  return d;
}

}  // namespace sr2seg
