// Sequence discriminators. Each layer is a temporal transformer encoder
// layer followed by a strided 1D convolution along time (kernel 3,
// stride 2, one frame of zero padding) that halves the length, rounding up.
#pragma once

#include "cohedance/audio.hpp"
#include "cohedance/autodiff.hpp"
#include "cohedance/generators.hpp"
#include "cohedance/motion.hpp"
#include "cohedance/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cohedance {

struct DiscriminatorConfig {
  AttentionConfig attn;
  int layers = 2;

  void validate() const {
    attn.validate();
    if (layers < 1) throw ShapeError("discriminator config: layers must be >= 1");
  }
};

/// Length after `layers` stride-2 convolutions: ceil(T / 2^layers).
inline int downsampled_length(int t, int layers) {
  for (int i = 0; i < layers; ++i) t = (t + 1) / 2;
  return t;
}

namespace disc_detail {

template <class S>
void init_conv(ParamStore<S>& store, const std::string& name, int dim, Rng& rng) {
  for (int k = 0; k < 3; ++k) {
    // Fan-in is 3 * dim across the three taps.
    const double a = std::sqrt(6.0 / (4.0 * dim));
    Mat<S> w(dim, dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.uniform(-a, a));
    store.values[name + ".w" + std::to_string(k)] = std::move(w);
  }
  store.values[name + ".b"] = Mat<S>::Zero(1, dim);
}

/// Stride-2 convolution over each of `groups` stacked sequences.
template <class S>
Var<S> strided_conv(const Params<S>& p, const std::string& name, Var<S> x, int groups) {
  const int len = static_cast<int>(x.rows()) / groups;
  const int out_len = (len + 1) / 2;
  Var<S> acc{};
  for (int k = 0; k < 3; ++k) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(groups * out_len));
    for (int g = 0; g < groups; ++g)
      for (int o = 0; o < out_len; ++o) {
        const int in = 2 * o - 1 + k;
        idx.push_back(in < 0 || in >= len ? -1 : g * len + in);
      }
    Var<S> term = ad::matmul(ad::gather_rows(x, std::move(idx)), p(name + ".w" + std::to_string(k)));
    acc = k == 0 ? term : ad::add(acc, term);
  }
  return ad::gelu(ad::add_row(acc, p(name + ".b")));
}

}  // namespace disc_detail

/// Shared trunk: input map, (encoder layer + conv) x L, mean pool, logit.
/// `groups` independent sequences (dancers) share the trunk and are pooled
/// together with time.
template <class S>
class SequenceDiscriminator {
 public:
  SequenceDiscriminator() = default;
  SequenceDiscriminator(std::string prefix, int input_dim, const DiscriminatorConfig& cfg, std::uint64_t seed)
      : prefix_(std::move(prefix)), input_dim_(input_dim), config_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, prefix_));
    const int c = cfg.attn.model_dim;
    init::linear(params_, prefix_ + ".in", input_dim, c, rng);
    for (int i = 0; i < cfg.layers; ++i) {
      const std::string base = prefix_ + ".L" + std::to_string(i);
      init::self_layer(params_, base + ".enc", cfg.attn, rng);
      disc_detail::init_conv(params_, base + ".conv", c, rng);
    }
    init::layer_norm(params_, prefix_ + ".ln_out", c);
    init::linear(params_, prefix_ + ".head", c, 1, rng);
  }

  const DiscriminatorConfig& config() const { return config_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  /// x: (groups * T) x input_dim -> 1 x 1 logit.
  Var<S> logit(const Params<S>& p, Var<S> x, int groups) const {
    if (x.cols() != input_dim_) throw ShapeError("discriminator: input width mismatch");
    if (groups < 1 || x.rows() % groups != 0 || x.rows() == 0) throw ShapeError("discriminator: rows not divisible by groups");
    Var<S> h = gen_detail::add_positions(linear(p, prefix_ + ".in", x), groups);
    for (int i = 0; i < config_.layers; ++i) {
      const std::string base = prefix_ + ".L" + std::to_string(i);
      h = temporal_self_layer(p, base + ".enc", h, config_.attn, false, groups);
      h = disc_detail::strided_conv(p, base + ".conv", h, groups);
    }
    return linear(p, prefix_ + ".head", mean_rows(layer_norm(p, prefix_ + ".ln_out", h)));
  }

  Var<S> probability(const Params<S>& p, Var<S> x, int groups) const { return ad::sigmoid(logit(p, x, groups)); }

 private:
  std::string prefix_;
  int input_dim_ = 0;
  DiscriminatorConfig config_;
  ParamStore<S> params_;
};

template <class S>
class MusicDiscriminator : public SequenceDiscriminator<S> {
 public:
  MusicDiscriminator() = default;
  MusicDiscriminator(const DiscriminatorConfig& cfg, std::uint64_t seed)
      : SequenceDiscriminator<S>("disc_music", kMusicDim, cfg, seed) {}
};

/// Each dancer runs through the shared trunk; pooling averages over time
/// and dancers, so the score does not depend on dancer order.
template <class S>
class DanceDiscriminator : public SequenceDiscriminator<S> {
 public:
  DanceDiscriminator() = default;
  DanceDiscriminator(const DiscriminatorConfig& cfg, std::uint64_t seed)
      : SequenceDiscriminator<S>("disc_dance", kPoseDim, cfg, seed) {}
};

template <class S>
double d_music(const MusicDiscriminator<S>& disc, const MusicFeatureSequence& m) {
  Graph<S> g(false);
  Params<S> p{g, disc.params(), false};
  return static_cast<double>(disc.probability(p, g.constant(to_matrix<S>(m)), 1).scalar());
}

template <class S>
double d_dance(const DanceDiscriminator<S>& disc, const GroupDanceSequence& d) {
  Graph<S> g(false);
  Params<S> p{g, disc.params(), false};
  return static_cast<double>(disc.probability(p, g.constant(to_matrix<S>(d)), d.dancers).scalar());
}

}  // namespace cohedance
