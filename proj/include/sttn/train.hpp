// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Training loop (alternating generator/discriminator updates on synthetic
// clips), sliding-window inference, and attention-map dumps. All randomness
// derives from per-step substreams of the root seed, so single-threaded runs
// are bit-reproducible and the optional producer thread changes only who
// generates a clip, not its content.

#pragma once

#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

#include "sttn/checkpoint.hpp"
#include "sttn/config.hpp"
#include "sttn/losses.hpp"
#include "sttn/maskgen.hpp"
#include "sttn/metrics.hpp"
#include "sttn/sampling.hpp"
#include "sttn/synth.hpp"

namespace sttn {

// ---------------------------------------------------------------------------
// Optimizer

/// Adaptive-moment gradient descent, beta = (0.9, 0.999), eps = 1e-8.
/// The learning rate decays by 0.1 every `decay_step` steps.
template <typename S>
class Adam {
 public:
  Adam(std::vector<NamedParam<S>> params, double lr, Index decay_step)
      : params_(std::move(params)), lr0_(lr), decay_step_(decay_step) {
    for (const auto& p : params_) {
      m_.emplace_back(std::size_t(p.tensor.size()), S(0));
      v_.emplace_back(std::size_t(p.tensor.size()), S(0));
    }
  }

  double lr() const {
    return lr0_ * std::pow(0.1, double(t_ / decay_step_));
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step() {
    const double alpha = lr();
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, double(t_));
    const double bc2 = 1.0 - std::pow(b2, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto vals = params_[k].tensor.mutable_values();
      const auto grads = params_[k].tensor.grad();
      if (grads.empty()) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double g = double(grads[i]);
        m[i] = S(b1 * double(m[i]) + (1 - b1) * g);
        v[i] = S(b2 * double(v[i]) + (1 - b2) * g * g);
        const double mhat = double(m[i]) / bc1;
        const double vhat = double(v[i]) / bc2;
        vals[i] -= S(alpha * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

  Index step_count() const { return t_; }

  void save_state(Checkpoint<S>* ck, const std::string& prefix) const {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const Shape& sh = params_[k].tensor.shape();
      ck->tensors[prefix + ".m." + params_[k].name] = {sh, m_[k]};
      ck->tensors[prefix + ".v." + params_[k].name] = {sh, v_[k]};
    }
    ck->words[prefix + ".t"] = {std::uint64_t(t_)};
  }

  void load_state(const Checkpoint<S>& ck, const std::string& prefix) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      m_[k] = ck.tensor(prefix + ".m." + params_[k].name).data;
      v_[k] = ck.tensor(prefix + ".v." + params_[k].name).data;
    }
    t_ = Index(ck.words.at(prefix + ".t")[0]);
  }

  const std::vector<NamedParam<S>>& params() const { return params_; }

 private:
  std::vector<NamedParam<S>> params_;
  std::vector<std::vector<S>> m_, v_;
  double lr0_;
  Index decay_step_;
  Index t_ = 0;
};

// ---------------------------------------------------------------------------
// Data pipeline

template <typename S>
struct TrainSample {
  Tensor<S> frames01;  // [K,3,H,W] in [0,1]
  Tensor<S> masks;     // [K,1,H,W] binary
};

namespace detail {

/// Single-producer bounded queue handing samples to the training thread.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t cap) : cap_(cap) {}

  void push(T item) {
    std::unique_lock<std::mutex> lock(m_);
    cv_push_.wait(lock, [&] { return q_.size() < cap_ || closed_; });
    if (closed_) return;
    q_.push_back(std::move(item));
    cv_pop_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock<std::mutex> lock(m_);
    cv_pop_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    T item = std::move(q_.front());
    q_.pop_front();
    cv_push_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard<std::mutex> lock(m_);
    closed_ = true;
    cv_push_.notify_all();
    cv_pop_.notify_all();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_push_, cv_pop_;
  std::deque<T> q_;
  std::size_t cap_;
  bool closed_ = false;
};

}  // namespace detail

inline SyntheticSceneSpec scene_spec_from(const RunConfig& cfg,
                                          std::uint64_t seed) {
  SyntheticSceneSpec s;
  s.width = cfg.model.frame_width;
  s.height = cfg.model.frame_height;
  s.frames = cfg.video_frames;
  s.sprites = cfg.sprites;
  s.max_speed = cfg.max_speed;
  s.background = cfg.background == "texture"
                     ? SyntheticSceneSpec::Background::Texture
                     : SyntheticSceneSpec::Background::Gradient;
  s.seed = seed;
  return s;
}

/// Deterministic per-step sample: a fresh synthetic clip, `clip_frames`
/// frames chosen consecutively or at random with equal probability, and a
/// stationary mask that leaves every attention head at least one visible key
/// (degenerate masks are resampled).
template <typename S>
TrainSample<S> make_train_sample(const RunConfig& cfg, Index step) {
  const std::uint64_t scene_seed =
      Rng::split(cfg.seed, std::uint64_t(3 * step + 1)).next_u64();
  Rng sel_rng = Rng::split(cfg.seed, std::uint64_t(3 * step + 2));
  Rng mask_rng = Rng::split(cfg.seed, std::uint64_t(3 * step + 3));

  Clip<S> clip = generate_clip<S>(scene_spec_from(cfg, scene_seed));
  const Index T = cfg.video_frames, K = cfg.clip_frames;

  std::vector<Index> pick;
  if (sel_rng.coin()) {
    const Index start = sel_rng.uniform_index(0, T - K);
    for (Index i = 0; i < K; ++i) pick.push_back(start + i);
  } else {
    std::vector<Index> all(std::size_t(T));
    for (Index i = 0; i < T; ++i) all[std::size_t(i)] = i;
    for (Index i = 0; i < K; ++i) {
      const Index j = sel_rng.uniform_index(i, T - 1);
      std::swap(all[std::size_t(i)], all[std::size_t(j)]);
    }
    pick.assign(all.begin(), all.begin() + K);
    std::sort(pick.begin(), pick.end());
  }

  TrainSample<S> sample;
  const Index fstride = 3 * cfg.model.frame_height * cfg.model.frame_width;
  sample.frames01 = Tensor<S>(
      Shape{K, 3, cfg.model.frame_height, cfg.model.frame_width});
  for (Index k = 0; k < K; ++k)
    std::copy_n(clip.frames.data() + pick[std::size_t(k)] * fstride, fstride,
                sample.frames01.data() + k * fstride);

  MaskSpec mspec;
  mspec.height = cfg.model.frame_height;
  mspec.width = cfg.model.frame_width;
  mspec.max_points = cfg.mask_max_points;
  mspec.max_length_frac = cfg.mask_max_length_frac;
  for (int attempt = 0; attempt < 16; ++attempt) {
    mspec.seed = mask_rng.next_u64();
    auto mask = generate_stationary_mask(mspec);
    Tensor<S> mt = mask_tensor<S>(mask, K, mspec.height, mspec.width);
    Tensor<S> feat = downsample_mask_max(mt, 4);
    bool ok = true;
    for (const auto& hp : cfg.model.head_patches) {
      auto vis = patch_visibility(feat, hp[0], hp[1],
                                  cfg.model.visibility_threshold);
      Index n = 0;
      for (auto v : vis) n += v;
      if (n == 0) {
        ok = false;
        break;
      }
    }
    if (ok) {
      sample.masks = mt;
      return sample;
    }
  }
  throw ValueError("training: could not draw a mask with visible keys");
}

// ---------------------------------------------------------------------------
// Training

struct StepLosses {
  double hole = 0, valid = 0, adv = 0, d = 0;
};

struct TrainResult {
  std::vector<StepLosses> history;
  std::filesystem::path checkpoint_path;
  std::filesystem::path csv_path;
};

namespace detail {

/// [K,3,H,W] frame batch -> [1,3,K,H,W] video tensor for the discriminator.
template <typename S>
Tensor<S> frames_to_video(const Tensor<S>& frames) {
  Tensor<S> p = permute(frames, {1, 0, 2, 3});
  Shape s = p.shape();
  return reshape(p, {1, s[0], s[1], s[2], s[3]});
}

}  // namespace detail

template <typename S>
void save_train_checkpoint(const std::filesystem::path& path,
                           std::uint64_t digest, Index step,
                           std::uint64_t seed, Generator<S>& gen,
                           Discriminator<S>& disc, const Adam<S>& opt_g,
                           const Adam<S>& opt_d) {
  Checkpoint<S> ck;
  ck.config_digest = digest;
  ck.step = std::uint64_t(step);
  for (const auto& p : gen.params()) ck.put_tensor("g." + p.name, p.tensor);
  for (const auto& p : disc.params()) ck.put_tensor("d." + p.name, p.tensor);
  auto& sn = disc.sn_states();
  for (std::size_t i = 0; i < sn.size(); ++i) {
    ck.tensors["d.sn" + std::to_string(i) + ".u"] = {
        Shape{Index(sn[i].u.size())}, sn[i].u};
    ck.tensors["d.sn" + std::to_string(i) + ".v"] = {
        Shape{Index(sn[i].v.size())}, sn[i].v};
  }
  opt_g.save_state(&ck, "adam_g");
  opt_d.save_state(&ck, "adam_d");
  ck.words["rng.seed"] = {seed};
  save_checkpoint(path, ck);
}

/// Load generator weights from a checkpoint (digest-checked).
template <typename S>
std::uint64_t load_generator(const std::filesystem::path& path,
                             std::uint64_t digest, Generator<S>& gen) {
  Checkpoint<S> ck = load_checkpoint<S>(path, digest);
  for (auto& p : gen.params()) ck.load_into("g." + p.name, p.tensor);
  return ck.step;
}

/// One alternating update: D on (real, detached composite), then G on the
/// reconstruction losses plus the adversarial term through the updated D.
template <typename S>
StepLosses train_step(Generator<S>& gen, Discriminator<S>& disc, Adam<S>& opt_g,
                      Adam<S>& opt_d, const TrainSample<S>& sample,
                      const LossWeights<S>& weights) {
  // constants prepared off-tape
  Tensor<S> truth = affine(sample.frames01, S(2), S(-1));  // [-1,1]
  Tensor<S> inv_mask = affine(sample.masks, S(-1), S(1));
  Tensor<S> input = mul(truth, inv_mask);  // hole-zeroed

  Tape<S> tape_g;
  Tensor<S> generated, composited;
  {
    typename Tape<S>::Scope scope(tape_g);
    generated = gen.forward(input, sample.masks);
    composited = composite(generated, input, sample.masks);
  }

  StepLosses out;
  {
    Tape<S> tape_d;
    typename Tape<S>::Scope scope(tape_d);
    Tensor<S> real = disc.forward(detail::frames_to_video(truth), true);
    Tensor<S> fake =
        disc.forward(detail::frames_to_video(detach(composited)), true);
    Tensor<S> ld = d_loss(real, fake);
    out.d = double(ld.item());
    opt_d.zero_grad();
    tape_d.backward(ld);
    opt_d.step();
  }

  {
    typename Tape<S>::Scope scope(tape_g);
    Tensor<S> fake = disc.forward(detail::frames_to_video(composited), false);
    Tensor<S> lh = l1_hole(truth, generated, sample.masks);
    Tensor<S> lv = l1_valid(truth, generated, sample.masks);
    Tensor<S> la = g_adv_loss(fake);
    Tensor<S> total = total_loss(lh, lv, la, weights);
    out.hole = double(lh.item());
    out.valid = double(lv.item());
    out.adv = double(la.item());
    opt_g.zero_grad();
    tape_g.backward(total);
    opt_g.step();
  }
  return out;
}

template <typename S>
TrainResult train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                  std::function<void(Index, const StepLosses&)> progress = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::uint64_t digest = config_digest(cfg);

  Rng rng_g = Rng::split(cfg.seed, 1);
  Rng rng_d = Rng::split(cfg.seed, 2);
  Generator<S> gen(cfg.model, rng_g);
  Discriminator<S> disc(cfg.model, rng_d);
  Adam<S> opt_g(gen.params(), cfg.lr, cfg.lr_decay_step);
  Adam<S> opt_d(disc.params(), cfg.lr, cfg.lr_decay_step);
  LossWeights<S> weights{S(cfg.lambda_hole), S(cfg.lambda_valid),
                         S(cfg.lambda_adv)};

  TrainResult result;
  result.csv_path = out_dir / "losses.csv";
  result.checkpoint_path = out_dir / "checkpoint.bin";
  std::ofstream csv(result.csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + result.csv_path.string());
  csv << "step,L_hole,L_valid,L_adv,L_D\n";

  // optional producer thread feeding a bounded queue; sample content depends
  // only on (seed, step), so threading never changes the data
  std::unique_ptr<detail::BoundedQueue<std::pair<Index, TrainSample<S>>>> queue;
  std::thread producer;
  if (cfg.data_threads > 0) {
    queue = std::make_unique<detail::BoundedQueue<std::pair<Index, TrainSample<S>>>>(4);
    producer = std::thread([&cfg, q = queue.get()]() {
      try {
        for (Index step = 0; step < cfg.steps; ++step)
          q->push({step, make_train_sample<S>(cfg, step)});
      } catch (...) {
        q->close();
      }
    });
  }

  auto dump_diagnostics = [&](Index step, const StepLosses& l) {
    std::ofstream diag(out_dir / "diagnostic.txt", std::ios::trunc);
    diag << "non-finite loss at step " << step << "\n"
         << "L_hole=" << l.hole << " L_valid=" << l.valid << " L_adv=" << l.adv
         << " L_D=" << l.d << "\n";
    for (const auto& p : opt_g.params()) {
      double norm = 0;
      for (S v : p.tensor.values()) norm += double(v) * double(v);
      diag << "g." << p.name << " l2=" << std::sqrt(norm) << "\n";
    }
  };

  for (Index step = 0; step < cfg.steps; ++step) {
    TrainSample<S> sample;
    if (queue) {
      auto item = queue->pop();
      require(item.has_value() && item->first == step,
              "training: data pipeline stopped early");
      sample = std::move(item->second);
    } else {
      sample = make_train_sample<S>(cfg, step);
    }

    StepLosses losses = train_step(gen, disc, opt_g, opt_d, sample, weights);
    if (!std::isfinite(losses.hole) || !std::isfinite(losses.valid) ||
        !std::isfinite(losses.adv) || !std::isfinite(losses.d)) {
      dump_diagnostics(step, losses);
      if (queue) queue->close();
      if (producer.joinable()) producer.join();
      throw NumericError("training: non-finite loss at step " +
                         std::to_string(step) + ", diagnostics written");
    }

    csv << step << "," << losses.hole << "," << losses.valid << ","
        << losses.adv << "," << losses.d << "\n";
    if (step % 50 == 0) csv.flush();
    result.history.push_back(losses);
    if (progress) progress(step, losses);

    if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps)
      save_train_checkpoint(result.checkpoint_path, digest, step + 1, cfg.seed,
                            gen, disc, opt_g, opt_d);
  }

  if (queue) queue->close();
  if (producer.joinable()) producer.join();
  return result;
}

// ---------------------------------------------------------------------------
// Inference

/// Sliding-window completion of a whole video. Window centers advance by the
/// full neighborhood width, so every frame takes its result from the window
/// where it is most central. Returns composited frames in [0,1].
template <typename S>
Tensor<S> infer_video(Generator<S>& gen, const Tensor<S>& frames01,
                      const Tensor<S>& masks, const SamplingPlan& base) {
  require_shape(frames01.rank() == 4 && masks.rank() == 4 &&
                    frames01.dim(0) == masks.dim(0),
                "infer: frames/masks disagree");
  const Index T = frames01.dim(0);
  const Index r = base.radius;
  const Index stride = 2 * r + 1;

  Tensor<S> result(frames01.shape());
  std::vector<std::uint8_t> written(std::size_t(T), 0);
  for (Index center = std::min(r, T - 1); ; center += stride) {
    SamplingPlan plan = base;
    plan.target = std::min(center, T - 1);
    BatchSelection<S> sel = build_batch(frames01, masks, plan);

    Tensor<S> truth = affine(sel.frames, S(2), S(-1));
    Tensor<S> input = mul(truth, affine(sel.masks, S(-1), S(1)));
    Tensor<S> generated = gen.forward(input, sel.masks);
    Tensor<S> comp01 =
        affine(composite(generated, input, sel.masks), S(0.5), S(0.5));

    const Index fstride = comp01.size() / comp01.dim(0);
    for (std::size_t k = 0; k < sel.indices.size(); ++k) {
      const Index src = sel.indices[k];
      if (written[std::size_t(src)]) continue;
      if (std::abs(src - plan.target) > r) continue;  // distant context row
      std::copy_n(comp01.data() + Index(k) * fstride, fstride,
                  result.data() + src * fstride);
      written[std::size_t(src)] = 1;
    }
    if (center >= T - 1) break;
  }
  for (auto w : written) require(w, "infer: window stitching left a gap");
  return result;
}

/// Per-frame mean-color fill of the holes; the reference baseline for
/// hole-region quality comparisons.
template <typename S>
Tensor<S> mean_fill_baseline(const Tensor<S>& frames01, const Tensor<S>& masks) {
  const Index T = frames01.dim(0), C = frames01.dim(1), H = frames01.dim(2),
              W = frames01.dim(3);
  Tensor<S> out = detach(frames01);
  for (Index t = 0; t < T; ++t) {
    for (Index c = 0; c < C; ++c) {
      double sum = 0;
      Index count = 0;
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x)
          if (masks.at({t, 0, y, x}) == S(0)) {
            sum += double(frames01.at({t, c, y, x}));
            ++count;
          }
      const S fill = count > 0 ? S(sum / double(count)) : S(0.5);
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x)
          if (masks.at({t, 0, y, x}) == S(1))
            out.mutable_values()[std::size_t(((t * C + c) * H + y) * W + x)] =
                fill;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention heatmaps

/// One PGM heatmap per (layer, head, query patch of the chosen frame): the
/// attention row reshaped to the key grid, frames stacked vertically,
/// normalized by the row maximum.
template <typename S>
Index dump_attention_maps(Generator<S>& gen, const Tensor<S>& frames01,
                          const Tensor<S>& masks, Index query_frame,
                          const std::filesystem::path& out_dir) {
  require(query_frame >= 0 && query_frame < frames01.dim(0),
          "attn-dump: query frame out of range");
  Tensor<S> truth = affine(frames01, S(2), S(-1));
  Tensor<S> input = mul(truth, affine(masks, S(-1), S(1)));
  std::vector<AttentionTrace<S>> traces;
  (void)gen.forward(input, masks, &traces);

  std::filesystem::create_directories(out_dir);
  Index files = 0;
  for (std::size_t li = 0; li < traces.size(); ++li) {
    for (std::size_t hi = 0; hi < traces[li].heads.size(); ++hi) {
      const auto& ht = traces[li].heads[hi];
      const Index per_frame = ht.gh * ht.gw;
      for (Index gy = 0; gy < ht.gh; ++gy) {
        for (Index gx = 0; gx < ht.gw; ++gx) {
          const Index q = (query_frame * ht.gh + gy) * ht.gw + gx;
          ImageU8 img;
          img.width = ht.gw;
          img.height = ht.t * ht.gh;
          img.channels = 1;
          img.pixels.assign(std::size_t(img.width * img.height), 0);
          S row_max = 0;
          for (Index j = 0; j < ht.t * per_frame; ++j)
            row_max = std::max(row_max, ht.alpha.at({q, j}));
          if (row_max > S(0)) {
            for (Index j = 0; j < ht.t * per_frame; ++j) {
              const double v = double(ht.alpha.at({q, j})) / double(row_max);
              img.pixels[std::size_t(j)] =
                  std::uint8_t(std::lround(255.0 * v));
            }
          }
          char name[96];
          std::snprintf(name, sizeof name, "layer%zu_head%zu_q%02lld_%02lld.pgm",
                        li, hi, (long long)gy, (long long)gx);
          write_pgm(out_dir / name, img);
          ++files;
        }
      }
    }
  }
  return files;
}

}  // namespace sttn
