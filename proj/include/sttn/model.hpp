// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Full generator (frame-level encoder -> transformer stack -> frame-level
// decoder) and the spectral-normalized 3D-conv discriminator that scores
// spatial-temporal patches.

#pragma once

#include <string>

#include "sttn/transformer.hpp"

namespace sttn {

struct ModelConfig {
  Index frame_width = 64;
  Index frame_height = 36;
  Index base_channels = 32;  // first two encoder convs
  Index mid_channels = 48;   // third encoder conv
  Index channels = 64;       // transformer width
  Index layers = 2;
  std::vector<std::array<Index, 2>> head_patches = {{9, 16}, {3, 4}, {1, 2}, {1, 1}};
  double visibility_threshold = 0.5;
  std::vector<Index> disc_channels = {32, 64, 96, 96, 96, 96};

  Index feature_height() const { return frame_height / 4; }
  Index feature_width() const { return frame_width / 4; }

  /// The 432x240 full-size configuration: encoder 64/64/128/256, eight
  /// transformer layers over the four patch scales of the 108x60 feature
  /// grid, discriminator channels 64..256.
  static ModelConfig full_scale() {
    ModelConfig c;
    c.frame_width = 432;
    c.frame_height = 240;
    c.base_channels = 64;
    c.mid_channels = 128;
    c.channels = 256;
    c.layers = 8;
    c.head_patches = {{60, 108}, {20, 36}, {10, 18}, {5, 9}};
    c.disc_channels = {64, 128, 256, 256, 256, 256};
    return c;
  }

  void validate() const {
    require(frame_width % 4 == 0 && frame_height % 4 == 0,
            "config: frame size must be divisible by 4");
    require(layers >= 1, "config: at least one transformer layer");
    require(!head_patches.empty(), "config: at least one attention head");
    require(channels % Index(head_patches.size()) == 0,
            "config: channels must split across heads");
    for (const auto& p : head_patches)
      require(p[0] > 0 && p[1] > 0 && feature_height() % p[0] == 0 &&
                  feature_width() % p[1] == 0,
              "config: head patch " + std::to_string(p[0]) + "x" +
                  std::to_string(p[1]) + " does not divide the " +
                  std::to_string(feature_height()) + "x" +
                  std::to_string(feature_width()) + " feature grid");
    require(disc_channels.size() == 6, "config: discriminator has six layers");
    require(visibility_threshold >= 0.0 && visibility_threshold <= 1.0,
            "config: visibility threshold must lie in [0,1]");
  }
};

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

namespace detail {

template <typename S>
void push_conv(std::vector<NamedParam<S>>& out, const std::string& name,
               const Conv2dLayer<S>& l) {
  out.push_back({name + ".weight", l.weight});
  out.push_back({name + ".bias", l.bias});
}

template <typename S>
void push_conv(std::vector<NamedParam<S>>& out, const std::string& name,
               const Conv3dLayer<S>& l) {
  out.push_back({name + ".weight", l.weight});
  out.push_back({name + ".bias", l.bias});
}

}  // namespace detail

/// Encoder -> transformer stack -> decoder. Frames are processed as a batch
/// through all 2-D convs (frame-level); every cross-frame interaction happens
/// inside the transformer stack. The mask rides along as a fourth input
/// channel so the encoder can tell holes from genuinely dark pixels.
template <typename S>
class Generator {
 public:
  Generator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const Index b = cfg.base_channels, m = cfg.mid_channels, c = cfg.channels;
    enc1_ = Conv2dLayer<S>::make(4, b, 3, 2, 1, rng);
    enc2_ = Conv2dLayer<S>::make(b, b, 3, 1, 1, rng);
    enc3_ = Conv2dLayer<S>::make(b, m, 3, 2, 1, rng);
    enc4_ = Conv2dLayer<S>::make(m, c, 3, 1, 1, rng);
    for (Index i = 0; i < cfg.layers; ++i)
      stack_.push_back(TransformerLayer<S>::make(c, cfg.head_patches, rng));
    dec1_ = Conv2dLayer<S>::make(c, m, 3, 1, 1, rng);
    dec2_ = Conv2dLayer<S>::make(m, b, 3, 1, 1, rng);
    dec3_ = Conv2dLayer<S>::make(b, b, 3, 1, 1, rng);
    dec4_ = Conv2dLayer<S>::make(b, 3, 3, 1, 1, rng);
  }

  const ModelConfig& config() const { return cfg_; }

  /// frames: [T,3,H,W] hole-zeroed, in [-1,1]; masks: [T,1,H,W] binary.
  /// Returns tanh-bounded frames of the same shape.
  Tensor<S> forward(const Tensor<S>& frames, const Tensor<S>& masks,
                    std::vector<AttentionTrace<S>>* traces = nullptr) const {
    require_shape(frames.rank() == 4 && frames.dim(1) == 3,
                  "generator: frames must be [T,3,H,W]");
    require_shape(masks.rank() == 4 && masks.dim(1) == 1 &&
                      masks.dim(0) == frames.dim(0) &&
                      masks.dim(2) == frames.dim(2) &&
                      masks.dim(3) == frames.dim(3),
                  "generator: masks must be [T,1,H,W] matching the frames");
    require_shape(frames.dim(2) % 4 == 0 && frames.dim(3) % 4 == 0,
                  "generator: H and W must be divisible by 4");

    Tensor<S> x = concat<S>({frames, masks}, 1);
    x = relu_leaky(conv2d(x, enc1_));
    x = relu_leaky(conv2d(x, enc2_));
    x = relu_leaky(conv2d(x, enc3_));
    x = relu_leaky(conv2d(x, enc4_));

    Tensor<S> mask_feat = downsample_mask_max(masks, 4);
    x = stack_forward(x, mask_feat, stack_, cfg_.visibility_threshold, traces);

    x = bilinear_upsample(x, 2);
    x = relu_leaky(conv2d(x, dec1_));
    x = relu_leaky(conv2d(x, dec2_));
    x = bilinear_upsample(x, 2);
    x = relu_leaky(conv2d(x, dec3_));
    return tanh(conv2d(x, dec4_));
  }

  std::vector<NamedParam<S>> params() {
    std::vector<NamedParam<S>> out;
    detail::push_conv(out, "enc1", enc1_);
    detail::push_conv(out, "enc2", enc2_);
    detail::push_conv(out, "enc3", enc3_);
    detail::push_conv(out, "enc4", enc4_);
    for (std::size_t i = 0; i < stack_.size(); ++i) {
      const std::string p = "layer" + std::to_string(i);
      for (std::size_t h = 0; h < stack_[i].heads.size(); ++h) {
        const std::string hp = p + ".head" + std::to_string(h);
        detail::push_conv(out, hp + ".q", stack_[i].heads[h].embed_q);
        detail::push_conv(out, hp + ".k", stack_[i].heads[h].embed_k);
        detail::push_conv(out, hp + ".v", stack_[i].heads[h].embed_v);
      }
      detail::push_conv(out, p + ".fusion", stack_[i].fusion);
      detail::push_conv(out, p + ".res1", stack_[i].res1);
      detail::push_conv(out, p + ".res2", stack_[i].res2);
    }
    detail::push_conv(out, "dec1", dec1_);
    detail::push_conv(out, "dec2", dec2_);
    detail::push_conv(out, "dec3", dec3_);
    detail::push_conv(out, "dec4", dec4_);
    return out;
  }

  Index param_count() {
    Index n = 0;
    for (const auto& p : params()) n += p.tensor.size();
    return n;
  }

  /// Encoder output channel trace, for architecture checks.
  std::vector<Index> encoder_channels() const {
    return {enc1_.out_channels(), enc2_.out_channels(), enc3_.out_channels(),
            enc4_.out_channels()};
  }

  std::vector<TransformerLayer<S>>& layers() { return stack_; }

 private:
  ModelConfig cfg_;
  Conv2dLayer<S> enc1_, enc2_, enc3_, enc4_;
  std::vector<TransformerLayer<S>> stack_;
  Conv2dLayer<S> dec1_, dec2_, dec3_, dec4_;
};

/// Six spectral-normalized 3D convolutions, kernel 3x5x5, stride (1,2,2),
/// padding (1,2,2): the temporal extent is preserved while spatial dims
/// shrink by 64x. The output is an unbounded real score map.
template <typename S>
class Discriminator {
 public:
  Discriminator(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Index in = 3;
    for (Index ch : cfg.disc_channels) {
      convs_.push_back(
          Conv3dLayer<S>::make(in, ch, {3, 5, 5}, {1, 2, 2}, {1, 2, 2}, rng));
      SpectralNormState<S> st;
      st.init(ch, in * 3 * 5 * 5, rng);
      sn_.push_back(std::move(st));
      in = ch;
    }
  }

  /// video: [1,3,T,H,W]. One power iteration per forward when update_sn.
  Tensor<S> forward(const Tensor<S>& video, bool update_sn = true) {
    require_shape(video.rank() == 5 && video.dim(1) == 3,
                  "discriminator: input must be [B,3,T,H,W]");
    require_shape(video.dim(2) >= 3,
                  "discriminator: needs at least 3 frames of temporal support");
    Tensor<S> x = video;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      Conv3dLayer<S> l = convs_[i];
      l.weight = spectral_normalize(convs_[i].weight, sn_[i], update_sn);
      x = conv3d(x, l);
      if (i + 1 < convs_.size()) x = relu_leaky(x);
    }
    return x;
  }

  std::vector<NamedParam<S>> params() {
    std::vector<NamedParam<S>> out;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      detail::push_conv(out, "disc" + std::to_string(i), convs_[i]);
    return out;
  }

  Index param_count() {
    Index n = 0;
    for (const auto& p : params()) n += p.tensor.size();
    return n;
  }

  std::vector<SpectralNormState<S>>& sn_states() { return sn_; }

 private:
  std::vector<Conv3dLayer<S>> convs_;
  std::vector<SpectralNormState<S>> sn_;
};

/// Composited result: generated content inside holes, input elsewhere.
template <typename S>
Tensor<S> composite(const Tensor<S>& generated, const Tensor<S>& input,
                    const Tensor<S>& masks) {
  Tensor<S> inv = affine(masks, S(-1), S(1));
  return add(mul(generated, masks), mul(input, inv));
}

}  // namespace sttn
