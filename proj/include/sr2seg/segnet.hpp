#pragma once

// Encoder-decoder segmentation network with pooling-index unpooling.

#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sr2seg/ops.hpp"
#include "sr2seg/tape.hpp"

namespace sr2seg {

struct EncoderStage {
  std::size_t depth = 1;
  std::size_t width = 64;
};

struct SegConfig {
  std::size_t num_classes = 6;
  std::vector<EncoderStage> encoder_plan{{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
  std::set<std::int32_t> ignore_ids{255};
  std::vector<double> class_weights;  // empty: unweighted cross-entropy

  std::size_t divisor() const { return std::size_t{1} << encoder_plan.size(); }

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("segmentation needs at least two classes");
    if (encoder_plan.empty()) throw std::invalid_argument("encoder plan must have at least one stage");
    for (const auto& s : encoder_plan)
      if (s.depth < 1 || s.width < 1) throw std::invalid_argument("encoder stage depth and width must be >= 1");
    if (!class_weights.empty() && class_weights.size() != num_classes)
      throw std::invalid_argument("class weight count must equal num_classes");
  }
};

template <class T>
class SegNet {
 public:
  struct Block {
    std::size_t weight, gamma, beta;
  };

  SegNet(SegConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const auto& plan = cfg_.encoder_plan;
    std::size_t in = 3;
    for (std::size_t s = 0; s < plan.size(); ++s) {
      std::vector<Block> stage;
      for (std::size_t d = 0; d < plan[s].depth; ++d) {
        stage.push_back(make_block("enc" + std::to_string(s + 1) + "." + std::to_string(d + 1), in, plan[s].width, rng));
        in = plan[s].width;
      }
      encoder_.push_back(std::move(stage));
    }
    decoder_.resize(plan.size());
    for (std::size_t s = plan.size(); s-- > 0;) {
      const std::size_t w = plan[s].width, out_w = s > 0 ? plan[s - 1].width : plan[0].width;
      for (std::size_t d = 0; d < plan[s].depth; ++d) {
        const std::size_t ow = d + 1 == plan[s].depth ? out_w : w;
        decoder_[s].push_back(make_block("dec" + std::to_string(s + 1) + "." + std::to_string(d + 1), w, ow, rng));
      }
    }
    classifier_w_ = params_.add("classifier.weight",
                                fan_in_normal<T>({cfg_.num_classes, plan[0].width, 1, 1}, plan[0].width, rng, 1.0));
    classifier_b_ = params_.add("classifier.bias", Tensor<T>(Shape{cfg_.num_classes}));
  }

  const SegConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  /// image: 3 x H x W in [0, 1]; returns per-pixel class scores K x H x W.
  VarId forward(Tape<T>& tape, VarId image) {
    const Tensor<T>& x = tape.value(image);
    if (x.rank() != 3 || x.channels() != 3)
      throw std::invalid_argument("segmentation forward expects a 3-channel image, got " + shape_str(x.shape()));
    const std::size_t div = cfg_.divisor();
    if (x.height() % div || x.width() % div)
      throw std::invalid_argument("segmentation input " + shape_str(x.shape()) + " not divisible by " +
                                  std::to_string(div));
    std::vector<PoolIndices> indices;
    VarId h = image;
    for (const auto& stage : encoder_) {
      for (const auto& b : stage) h = apply(tape, b, h);
      auto [pooled, idx] = max_pool(tape, h);
      h = pooled;
      indices.push_back(std::move(idx));
    }
    for (std::size_t s = decoder_.size(); s-- > 0;) {
      h = max_unpool(tape, h, indices[s]);
      for (const auto& b : decoder_[s]) h = apply(tape, b, h);
    }
    return conv2d(tape, h, tape.parameter(params_[classifier_w_]), tape.parameter(params_[classifier_b_]),
                  ConvGeometry{1, 1, 0});
  }

  /// Per-pixel argmax of a score map.
  static std::vector<std::int32_t> predict(const Tensor<T>& scores) {
    const std::size_t k = scores.channels(), n = scores.plane();
    std::vector<std::int32_t> out(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      T best = scores[i];
      for (std::size_t c = 1; c < k; ++c)
        if (scores[c * n + i] > best) {
          best = scores[c * n + i];
          out[i] = static_cast<std::int32_t>(c);
        }
    }
    return out;
  }

 private:
  Block make_block(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Block b;
    b.weight = params_.add(name + ".weight", fan_in_normal<T>({out, in, 3, 3}, in * 9, rng));
    b.gamma = params_.add(name + ".gamma", Tensor<T>(Shape{out}, T{1}));
    b.beta = params_.add(name + ".beta", Tensor<T>(Shape{out}));
    return b;
  }

  // conv 3x3 (no bias, the normalization absorbs it) -> channel norm -> ReLU
  VarId apply(Tape<T>& tape, const Block& b, VarId x) {
    VarId y = conv2d(tape, x, tape.parameter(params_[b.weight]), std::nullopt, ConvGeometry{3, 1, 1});
    y = channel_norm(tape, y, tape.parameter(params_[b.gamma]), tape.parameter(params_[b.beta]));
    return relu(tape, y);
  }

  SegConfig cfg_;
  ParameterStore<T> params_;
  std::vector<std::vector<Block>> encoder_, decoder_;
  std::size_t classifier_w_ = 0, classifier_b_ = 0;
};

}  // namespace sr2seg
