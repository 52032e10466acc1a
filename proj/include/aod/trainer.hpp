#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "aod/checkpoint.hpp"
#include "aod/data.hpp"
#include "aod/grads.hpp"
#include "aod/reinforce.hpp"
#include "aod/util.hpp"

namespace aod {

enum class SampleKind { foreground, background, ignored };

struct DetectionSample {
  int image_index = -1;
  std::string image_id;
  BoundingBox proposal;
  SampleKind kind = SampleKind::ignored;
  int class_index = -1;       // foreground only
  GlimpseDelta bbox_target;   // foreground only
  BoundingBox matched_gt;     // foreground only
};

struct LrSchedule {
  double decay_factor = 0.1;
  double decay_at_fraction = 0.75;
};

struct TrainConfig {
  int images_per_batch = 2;
  int fg_per_image = 16;
  int bg_per_image = 48;
  double lr = 0.003;
  double momentum = 0.9;
  std::optional<double> grad_clip = 10.0;
  int iterations = 2000;
  LrSchedule lr_schedule;
  std::uint64_t seed = 1;
  int checkpoint_every = 1000;
  int threads = 0;  // 0 = hardware concurrency
  RLConfig rl;
  AODConfig net;

  int batch_size() const { return images_per_batch * (fg_per_image + bg_per_image); }

  void validate() const {
    if (images_per_batch < 1 || fg_per_image < 0 || bg_per_image < 0 ||
        fg_per_image + bg_per_image < 1) {
      throw ValidationError("TrainConfig: bad minibatch composition");
    }
    if (lr <= 0.0) throw ValidationError("TrainConfig.lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) {
      throw ValidationError("TrainConfig.momentum must be in [0, 1)");
    }
    if (iterations < 0) throw ValidationError("TrainConfig.iterations must be >= 0");
    if (checkpoint_every < 1) throw ValidationError("TrainConfig.checkpoint_every must be >= 1");
    rl.validate();
    net.validate();
  }
};

// IoU-threshold labeling against the image's ground truths, done once before
// training: alpha >= 0.5 foreground, 0.1 <= alpha < 0.5 background, below that
// ignored. Ties on the max-IoU gt go to the lowest gt index.
inline std::vector<DetectionSample> assign_labels(const std::vector<BoundingBox>& proposals,
                                                  const std::vector<GtBox>& gts,
                                                  int image_index = -1,
                                                  const std::string& image_id = "") {
  if (gts.empty()) throw ValidationError("assign_labels: need at least one gt");
  std::vector<DetectionSample> out;
  out.reserve(proposals.size());
  for (const BoundingBox& p : proposals) {
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(p, gts[g].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    DetectionSample s;
    s.image_index = image_index;
    s.image_id = image_id;
    s.proposal = p;
    if (best >= 0.5) {
      s.kind = SampleKind::foreground;
      s.class_index = gts[best_gt].label;
      s.matched_gt = gts[best_gt].box;
      s.bbox_target = encode_glimpse(gts[best_gt].box, p);
    } else if (best >= 0.1) {
      s.kind = SampleKind::background;
    } else {
      s.kind = SampleKind::ignored;
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct ImagePools {
  int image_index = -1;
  std::vector<DetectionSample> foreground;
  std::vector<DetectionSample> background;
};

inline std::vector<ImagePools> label_dataset(const Dataset& ds) {
  std::vector<ImagePools> pools;
  pools.reserve(ds.images.size());
  int skipped = 0;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const AnnotatedImage& img = ds.images[i];
    ImagePools p;
    p.image_index = static_cast<int>(i);
    for (DetectionSample& s :
         assign_labels(img.proposals, img.gts, static_cast<int>(i), img.id)) {
      if (s.kind == SampleKind::foreground) {
        p.foreground.push_back(std::move(s));
      } else if (s.kind == SampleKind::background) {
        p.background.push_back(std::move(s));
      }
    }
    if (p.foreground.empty()) ++skipped;
    pools.push_back(std::move(p));
  }
  if (skipped > 0) {
    std::cerr << "[trainer] " << skipped
              << " image(s) have no foreground samples and are skipped for selection\n";
  }
  return pools;
}

namespace detail {

// k draws without replacement when the pool suffices, with replacement
// otherwise (the batch size is always preserved).
inline std::vector<int> draw_indices(int pool, int k, Rng& rng) {
  std::vector<int> out;
  out.reserve(k);
  if (pool >= k) {
    std::vector<int> idx(pool);
    for (int i = 0; i < pool; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(rng.below(pool - i));
      std::swap(idx[i], idx[j]);
      out.push_back(idx[i]);
    }
  } else {
    for (int i = 0; i < k; ++i) out.push_back(static_cast<int>(rng.below(pool)));
  }
  return out;
}

}  // namespace detail

inline std::vector<DetectionSample> build_minibatch(const std::vector<ImagePools>& pools,
                                                    const TrainConfig& cfg, std::uint64_t seed,
                                                    int iteration) {
  std::vector<int> eligible;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (!pools[i].foreground.empty()) eligible.push_back(static_cast<int>(i));
  }
  if (eligible.empty()) throw ValidationError("build_minibatch: no image has foreground samples");

  Rng rng = Rng::stream(seed, 0xba7c4, static_cast<std::uint64_t>(iteration));
  std::vector<DetectionSample> batch;
  batch.reserve(cfg.batch_size());

  const std::vector<int> img_draw =
      detail::draw_indices(static_cast<int>(eligible.size()), cfg.images_per_batch, rng);
  for (int d : img_draw) {
    const ImagePools& p = pools[eligible[d]];
    for (int i : detail::draw_indices(static_cast<int>(p.foreground.size()), cfg.fg_per_image,
                                      rng)) {
      batch.push_back(p.foreground[i]);
    }
    if (p.background.empty()) {
      // degenerate pool: keep the batch size with extra foreground draws
      for (int i : detail::draw_indices(static_cast<int>(p.foreground.size()),
                                        cfg.bg_per_image, rng)) {
        batch.push_back(p.foreground[i]);
      }
    } else {
      for (int i : detail::draw_indices(static_cast<int>(p.background.size()),
                                        cfg.bg_per_image, rng)) {
        batch.push_back(p.background[i]);
      }
    }
  }
  return batch;
}

struct SupervisedLossResult {
  double loss = 0.0;
  SupervisedGrads grads;
};

// Cross-entropy on the class posterior plus, for foreground samples, smooth-L1
// between the label class's regression output and the encoded target. The
// regression term (and its gradient) does not exist for background samples.
inline SupervisedLossResult supervised_loss(const NetworkOutput& output,
                                            const DetectionSample& sample) {
  if (sample.kind == SampleKind::ignored) {
    throw ContractError("supervised_loss: ignored samples are never trained on");
  }
  const int n_classes = static_cast<int>(output.class_logits.numel());
  const int background = n_classes - 1;
  const int target = sample.kind == SampleKind::foreground ? sample.class_index : background;

  SupervisedLossResult res;
  OpAttrs attrs;
  attrs.target = target;
  auto [loss, rec] = forward(OpKind::softmax_xent, {&output.class_logits}, attrs);
  res.loss = loss[0];
  res.grads.dlogits = backward(rec, Tensor({1}, {1.0}))[0];
  res.grads.dbbox_raw = Tensor(output.bbox_raw.shape);

  if (sample.kind == SampleKind::foreground) {
    const int c = sample.class_index;
    Tensor diff({4});
    const double target_vals[4] = {sample.bbox_target.dx, sample.bbox_target.dy,
                                   sample.bbox_target.dw, sample.bbox_target.dh};
    for (int i = 0; i < 4; ++i) diff[i] = output.bbox_raw[4 * c + i] - target_vals[i];
    auto [l1, rec1] = forward(OpKind::smooth_l1, {&diff});
    res.loss += l1[0];
    const Tensor dd = backward(rec1, Tensor({1}, {1.0}))[0];
    for (int i = 0; i < 4; ++i) res.grads.dbbox_raw[4 * c + i] = dd[i];
  }
  return res;
}

struct StepMetrics {
  int iteration = 0;
  double supervised_loss = 0.0;
  double mean_return = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

// Test instrumentation: suppress one gradient source to observe the other,
// or stop before the optimizer update so accumulated gradients can be read.
struct StepDebug {
  bool suppress_supervised = false;
  bool suppress_reinforce = false;
  bool skip_update = false;
};

struct TrainState {
  std::vector<Parameter*> params;
  std::vector<GradSink> sample_sinks;
  GradSink backbone_sink;
  TrainProgress progress;

  void ensure(AODParams& p, int batch_size) {
    params = p.param_list();
    if (static_cast<int>(sample_sinks.size()) != batch_size) {
      sample_sinks.assign(batch_size, GradSink());
      for (GradSink& s : sample_sinks) s.reset(params);
    }
    backbone_sink.reset(params);
  }
};

inline double lr_at(const TrainConfig& cfg, int iteration) {
  const double boundary = cfg.lr_schedule.decay_at_fraction * cfg.iterations;
  return iteration >= boundary ? cfg.lr * cfg.lr_schedule.decay_factor : cfg.lr;
}

inline StepMetrics train_step(const Dataset& ds, const std::vector<DetectionSample>& batch,
                              AODParams& params, const TrainConfig& cfg, int iteration,
                              TrainState& state, const StepDebug* debug = nullptr) {
  const auto t_start = std::chrono::steady_clock::now();
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  const AODConfig& net = params.config;
  const int n = static_cast<int>(batch.size());
  state.ensure(params, n);

  // one feature extraction per distinct image, with tape
  std::vector<int> image_of_sample(n);
  std::vector<int> image_indices;
  for (int i = 0; i < n; ++i) {
    const int img = batch[i].image_index;
    int slot = -1;
    for (std::size_t k = 0; k < image_indices.size(); ++k) {
      if (image_indices[k] == img) slot = static_cast<int>(k);
    }
    if (slot < 0) {
      slot = static_cast<int>(image_indices.size());
      image_indices.push_back(img);
    }
    image_of_sample[i] = slot;
  }
  std::vector<BackboneTape> tapes(image_indices.size());
  std::vector<FeatureMap> fms(image_indices.size());
  for (std::size_t k = 0; k < image_indices.size(); ++k) {
    fms[k] = extract_features(ds.images[image_indices[k]].image, params.backbone, &tapes[k]);
  }

  const bool want_reinforce = !(debug && debug->suppress_reinforce) && net.T > 1;
  const bool want_supervised = !(debug && debug->suppress_supervised);

  struct SampleWork {
    double loss = 0.0;
    std::vector<Episode> episodes;
    Tensor dfm;
    double return_sum = 0.0;
  };
  std::vector<SampleWork> work(n);

  // phase A: supervised pass and episode generation, parallel over samples
  parallel_for(static_cast<std::size_t>(n), cfg.threads, [&](std::size_t i) {
    const DetectionSample& sample = batch[i];
    GradSink& sink = state.sample_sinks[i];
    sink.clear();
    SampleWork& w = work[i];
    const FeatureMap& fm = fms[image_of_sample[i]];
    w.dfm = Tensor(fm.t.shape);

    const std::uint64_t dropout_seed =
        derive_seed(cfg.seed, 0xd0, static_cast<std::uint64_t>(iteration), i);

    Rollout clean = forward_rollout(fm, sample.proposal, params, ActionPlan{}, RunMode::train,
                                    dropout_seed);
    const SupervisedLossResult sup = supervised_loss(clean.output, sample);
    w.loss = sup.loss;
    if (want_supervised) {
      backward_rollout(clean, params, &sup.grads, nullptr, sink, w.dfm);
    }

    const bool fg = sample.kind == SampleKind::foreground;
    if (want_reinforce && (fg || cfg.rl.include_background)) {
      w.episodes.reserve(cfg.rl.n_episodes);
      for (int e = 0; e < cfg.rl.n_episodes; ++e) {
        Episode ep;
        ep.sample_index = static_cast<int>(i);
        Rng noise_rng = Rng::stream(derive_seed(cfg.seed, 0xe6, iteration),
                                    static_cast<std::uint64_t>(i), e);
        ep.noise = sample_glimpse_noise(noise_rng, net.T - 1, cfg.rl.sigma, net.glimpse_dof);
        ActionPlan plan;
        plan.noise = &ep.noise;
        ep.rollout =
            forward_rollout(fm, sample.proposal, params, plan, RunMode::train, dropout_seed);
        if (fg) {
          ep.raw_return = cfg.rl.reward_kind == RewardKind::continuous
                              ? compute_reward(ep.rollout.output, sample.class_index,
                                               sample.matched_gt, sample.proposal)
                              : compute_discrete_reward(ep.rollout.output, sample.class_index,
                                                        sample.matched_gt, sample.proposal,
                                                        cfg.rl.discrete_iou_thresh);
        } else {
          // background episodes (ablation): the IoU factor is fixed to 1
          const int bg = net.background_index();
          if (cfg.rl.reward_kind == RewardKind::continuous) {
            ep.raw_return = ep.rollout.output.class_probs[bg];
          } else {
            int argmax = 0;
            for (std::size_t ci = 1; ci < ep.rollout.output.class_probs.numel(); ++ci) {
              if (ep.rollout.output.class_probs[ci] >
                  ep.rollout.output.class_probs[argmax]) {
                argmax = static_cast<int>(ci);
              }
            }
            ep.raw_return = argmax == bg ? 1.0 : 0.0;
          }
        }
        w.return_sum += ep.raw_return;
        w.episodes.push_back(std::move(ep));
      }
    }
  });

  // phase B: baseline adjustment, sequential in batch order (the EMA baseline
  // is a single shared scalar)
  for (int i = 0; i < n; ++i) {
    SampleWork& w = work[i];
    if (w.episodes.empty()) continue;
    if (cfg.rl.baseline_kind == BaselineKind::return_norm) {
      std::vector<double> returns;
      returns.reserve(w.episodes.size());
      for (const Episode& e : w.episodes) returns.push_back(e.raw_return);
      const std::vector<double> adjusted = normalize_returns(returns);
      for (std::size_t e = 0; e < w.episodes.size(); ++e) {
        w.episodes[e].normalized_return = adjusted[e];
      }
    } else {
      for (Episode& e : w.episodes) {
        const EmaUpdate u =
            ema_baseline_update(state.progress.ema_state, e.raw_return, cfg.rl.ema_decay);
        e.normalized_return = u.centered_return;
        state.progress.ema_state = u.new_state;
      }
    }
  }

  // phase C: REINFORCE backward through each episode, parallel over samples
  parallel_for(static_cast<std::size_t>(n), cfg.threads, [&](std::size_t i) {
    SampleWork& w = work[i];
    if (w.episodes.empty()) return;
    const auto grads = policy_gradient(w.episodes, cfg.rl.sigma, cfg.rl.return_scale);
    for (std::size_t e = 0; e < w.episodes.size(); ++e) {
      // ascent direction enters the optimizer as a negated loss gradient
      std::vector<GlimpseDelta> dmu(grads[e].size());
      for (std::size_t t = 0; t < grads[e].size(); ++t) {
        dmu[t] = GlimpseDelta{-grads[e][t].dx, -grads[e][t].dy, -grads[e][t].dw,
                              -grads[e][t].dh};
      }
      backward_rollout(w.episodes[e].rollout, params, nullptr, &dmu, state.sample_sinks[i],
                       w.dfm);
    }
  });

  // reduce in fixed order: per-sample sinks, then backbone per image
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<Tensor> image_dfm;
  image_dfm.reserve(fms.size());
  for (const FeatureMap& fm : fms) image_dfm.emplace_back(fm.t.shape);
  for (int i = 0; i < n; ++i) {
    state.sample_sinks[i].add_to_params(inv_n);
    Tensor& dst = image_dfm[image_of_sample[i]];
    for (std::size_t k = 0; k < dst.numel(); ++k) dst[k] += inv_n * work[i].dfm[k];
  }
  state.backbone_sink.clear();
  for (std::size_t k = 0; k < fms.size(); ++k) {
    backbone_backward(tapes[k], params.backbone, image_dfm[k], state.backbone_sink);
  }
  state.backbone_sink.add_to_params(1.0);

  StepMetrics m;
  m.iteration = iteration;
  m.lr = lr_at(cfg, iteration);
  double loss_sum = 0.0;
  double return_sum = 0.0;
  int n_episodes = 0;
  for (const SampleWork& w : work) {
    loss_sum += w.loss;
    return_sum += w.return_sum;
    n_episodes += static_cast<int>(w.episodes.size());
  }
  m.supervised_loss = loss_sum * inv_n;
  m.mean_return = n_episodes > 0 ? return_sum / n_episodes : 0.0;
  m.grad_norm = global_grad_norm(state.params);

  if (!(debug && debug->skip_update)) {
    sgd_step(state.params, m.lr, cfg.momentum, cfg.grad_clip);
  }

  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                        t_start)
                  .count();
  return m;
}

inline std::string metrics_csv_header() {
  return "iteration,supervised_loss,mean_return,grad_norm,lr,wall_ms";
}

inline std::string metrics_csv_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.3f", m.iteration,
                m.supervised_loss, m.mean_return, m.grad_norm, m.lr, m.wall_ms);
  return buf;
}

struct TrainResult {
  AODParams params;
  std::vector<StepMetrics> metrics;
  TrainProgress progress;
};

// Full loop: label once, then iterate minibatch -> step, with periodic
// checkpoints and a metrics CSV when out_dir is given. Divergence saves the
// last good parameters before rethrowing.
inline TrainResult train(const Dataset& ds, const TrainConfig& cfg,
                         const std::string& out_dir = "",
                         const std::string& resume_checkpoint = "") {
  cfg.validate();
  if (ds.images.empty()) throw ValidationError("train: empty dataset");
  if (ds.images[0].image.shape[0] != cfg.net.image_channels) {
    throw ValidationError("train: dataset channels do not match AODConfig.image_channels");
  }

  TrainResult result;
  TrainState state;
  if (!resume_checkpoint.empty()) {
    result.params = load_checkpoint(resume_checkpoint, &state.progress);
    if (!(result.params.config == cfg.net)) {
      throw ValidationError("train: resume checkpoint config differs from TrainConfig.AODConfig");
    }
  } else {
    result.params = init_params(cfg.net, cfg.seed);
  }

  const std::vector<ImagePools> pools = label_dataset(ds);

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const bool fresh = state.progress.iteration == 0;
    csv.open(out_dir + "/metrics.csv", fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw ValidationError("train: cannot write metrics.csv in " + out_dir);
    if (fresh) csv << metrics_csv_header() << "\n";
  }

  for (int iter = state.progress.iteration; iter < cfg.iterations; ++iter) {
    const std::vector<DetectionSample> batch = build_minibatch(pools, cfg, cfg.seed, iter);
    StepMetrics m;
    try {
      m = train_step(ds, batch, result.params, cfg, iter, state);
    } catch (const NumericalError&) {
      if (!out_dir.empty()) {
        state.progress.iteration = iter;
        save_checkpoint(out_dir + "/checkpoint_diverged.json", result.params, &state.progress);
      }
      throw;
    }
    state.progress.iteration = iter + 1;
    result.metrics.push_back(m);
    if (csv.is_open()) csv << metrics_csv_row(m) << "\n";
    if (!out_dir.empty() && (iter + 1) % cfg.checkpoint_every == 0 &&
        iter + 1 < cfg.iterations) {
      save_checkpoint(out_dir + "/checkpoint_" + std::to_string(iter + 1) + ".json",
                      result.params, &state.progress);
    }
  }

  result.progress = state.progress;
  if (!out_dir.empty()) {
    save_checkpoint(out_dir + "/checkpoint.json", result.params, &state.progress);
  }
  return result;
}

}  // namespace aod
