#pragma once

#include <deque>
#include <string>
#include <vector>

#include "aod/backbone.hpp"
#include "aod/geometry.hpp"
#include "aod/grads.hpp"
#include "aod/ops.hpp"

namespace aod {

struct AODConfig {
  int T = 3;                  // glimpse steps; T-1 glimpse layers
  int K = 5;                  // foreground classes; classifier has K+1 outputs
  int fc6_dim = 64;
  int fc7_dim = 64;
  int glimpse_embed_dim = 32;
  int roi_grid_h = 4;
  int roi_grid_w = 4;
  bool stacked_rnn = true;    // recurrence at fc6 as well as fc7
  bool eltwise_max = true;    // fuse per-step features by coordinatewise max
  int glimpse_dof = 4;        // 4 = shift+scale, 2 = shift only
  int image_channels = 1;
  int backbone_c1 = 16;
  int backbone_c2 = 32;
  double dropout_rate = 0.5;

  int roi_feat_dim() const { return roi_grid_h * roi_grid_w * backbone_c2; }
  int combined_dim() const { return fc7_dim + glimpse_embed_dim; }
  int background_index() const { return K; }

  void validate() const {
    if (T < 1) throw ValidationError("AODConfig.T must be >= 1");
    if (K < 1) throw ValidationError("AODConfig.K must be >= 1");
    if (fc6_dim < 1 || fc7_dim < 1 || glimpse_embed_dim < 1) {
      throw ValidationError("AODConfig: layer dims must be >= 1");
    }
    if (roi_grid_h < 1 || roi_grid_w < 1) {
      throw ValidationError("AODConfig: roi grid dims must be >= 1");
    }
    if (glimpse_dof != 2 && glimpse_dof != 4) {
      throw ValidationError("AODConfig.glimpse_dof must be 2 or 4");
    }
    if (backbone_c1 < 1 || backbone_c2 < 1 || image_channels < 1) {
      throw ValidationError("AODConfig: channel counts must be >= 1");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ValidationError("AODConfig.dropout_rate must be in [0, 1)");
    }
  }

  bool operator==(const AODConfig&) const = default;
};

struct AODParams {
  AODConfig config;
  BackboneParams backbone;
  Parameter w6, r6, b6;
  Parameter w7, r7, b7;
  Parameter wg, rg, bg;                // glimpse-vector embedding
  std::vector<Parameter> wglimpse;     // one per step t < T, no bias
  Parameter cls_w, cls_b;
  Parameter reg_w, reg_b;

  std::vector<Parameter*> param_list() {
    std::vector<Parameter*> out;
    for (Parameter* p : backbone.param_list()) out.push_back(p);
    out.push_back(&w6);
    if (config.stacked_rnn) out.push_back(&r6);
    out.push_back(&b6);
    out.push_back(&w7);
    out.push_back(&r7);
    out.push_back(&b7);
    out.push_back(&wg);
    out.push_back(&rg);
    out.push_back(&bg);
    for (Parameter& p : wglimpse) out.push_back(&p);
    out.push_back(&cls_w);
    out.push_back(&cls_b);
    out.push_back(&reg_w);
    out.push_back(&reg_b);
    return out;
  }

  std::vector<const Parameter*> param_list() const {
    auto list = const_cast<AODParams*>(this)->param_list();
    return {list.begin(), list.end()};
  }
};

// Recurrent-stack layers at std 0.01 with zero biases; glimpse layers at
// std 1e-4 with no bias term. Deterministic in the seed.
inline AODParams init_params(const AODConfig& config, std::uint64_t seed) {
  config.validate();
  AODParams p;
  p.config = config;
  Rng rng_bb = Rng::stream(seed, 0xb0);
  Rng rng_fc = Rng::stream(seed, 0xfc);
  Rng rng_gl = Rng::stream(seed, 0x61);
  Rng rng_hd = Rng::stream(seed, 0x4d);
  p.backbone = BackboneParams::init(config.image_channels, config.backbone_c1,
                                    config.backbone_c2, rng_bb);
  const double fc_std = 0.01;
  p.w6 = Parameter("w6", Tensor::gaussian({config.fc6_dim, config.roi_feat_dim()}, fc_std, rng_fc));
  if (config.stacked_rnn) {
    p.r6 = Parameter("r6", Tensor::gaussian({config.fc6_dim, config.fc6_dim}, fc_std, rng_fc));
  }
  p.b6 = Parameter("b6", Tensor({config.fc6_dim}));
  p.w7 = Parameter("w7", Tensor::gaussian({config.fc7_dim, config.fc6_dim}, fc_std, rng_fc));
  p.r7 = Parameter("r7", Tensor::gaussian({config.fc7_dim, config.fc7_dim}, fc_std, rng_fc));
  p.b7 = Parameter("b7", Tensor({config.fc7_dim}));
  p.wg = Parameter("wg", Tensor::gaussian({config.glimpse_embed_dim, 4}, fc_std, rng_fc));
  p.rg = Parameter("rg", Tensor::gaussian({config.glimpse_embed_dim, config.glimpse_embed_dim},
                                          fc_std, rng_fc));
  p.bg = Parameter("bg", Tensor({config.glimpse_embed_dim}));
  for (int t = 1; t < config.T; ++t) {
    p.wglimpse.emplace_back("wglimpse" + std::to_string(t),
                            Tensor::gaussian({4, config.combined_dim()}, 1e-4, rng_gl));
  }
  p.cls_w = Parameter("cls_w", Tensor::gaussian({config.K + 1, config.combined_dim()}, 0.01, rng_hd));
  p.cls_b = Parameter("cls_b", Tensor({config.K + 1}));
  p.reg_w = Parameter("reg_w", Tensor::gaussian({4 * config.K, config.combined_dim()}, 0.001, rng_hd));
  p.reg_b = Parameter("reg_b", Tensor({4 * config.K}));
  return p;
}

enum class RunMode { train, eval };

// Controls the actions a_t at steps t < T.
//   noise set   : a_t = mu_t + noise_t  (episode rollout)
//   pinned set  : a_t = pinned_t        (frozen actions, e.g. gradient checks)
//   neither     : a_t = mu_t            (noiseless rollout)
struct ActionPlan {
  const std::vector<GlimpseDelta>* noise = nullptr;
  const std::vector<GlimpseDelta>* pinned = nullptr;
};

struct StepState {
  int t = 0;                  // 1-based step index
  GlimpseDelta glimpse_delta; // action a_t (zero at t = T, where none is taken)
  GlimpseDelta action_mean;   // mu_t before noise (zero at t = T)
  BoundingBox glimpse_box;    // unclipped box observed at this step
  Tensor h6, h7, hg;
  Tensor combined;            // concat(h7, hg): the state x_t
};

struct NetworkOutput {
  Tensor class_logits;                  // K+1
  Tensor class_probs;                   // softmax of logits
  Tensor bbox_raw;                      // 4K, grouped per foreground class
  std::vector<GlimpseDelta> bbox_deltas;  // decoded view of bbox_raw

  GlimpseDelta delta_for(int cls) const { return bbox_deltas.at(cls); }
};

// One forward pass with its tape; everything backward needs stays alive here.
// Move-only: op records point into the activation deque.
struct Rollout {
  Rollout() = default;
  Rollout(const Rollout&) = delete;
  Rollout& operator=(const Rollout&) = delete;
  Rollout(Rollout&&) = default;
  Rollout& operator=(Rollout&&) = default;

  std::vector<StepState> states;
  NetworkOutput output;

  struct StepTape {
    RoiRecord roi;
    OpRecord fc6, relu6, drop6;
    OpRecord fc7, relu7, drop7;
    OpRecord emb, relug;
    OpRecord cat;
    bool has_glimpse = false;
    OpRecord glimpse;
  };
  std::deque<Tensor> acts;  // owns activations; records point into this deque
  std::vector<StepTape> steps;
  bool fused_is_max = false;
  OpRecord fuse;
  OpRecord cls, reg;
  int fused_step = 0;  // when not fused by max: which step's combined is used
};

namespace detail {

inline void check_step_finite(const Tensor& t, int step, const char* layer) {
  if (!t.all_finite()) {
    throw DivergenceError(std::string("forward_rollout: non-finite ") + layer +
                          " at step " + std::to_string(step));
  }
}

// dW += u (outer) x, dx += W^T u in one pass over W's rows.
inline void affine_backward_accum(const Tensor& upstream, const Tensor& x, const Tensor& w,
                                  Tensor* dx, Tensor& dw) {
  const int out_dim = w.shape[0];
  const int in_dim = w.shape[1];
  for (int o = 0; o < out_dim; ++o) {
    const double u = upstream[o];
    if (u == 0.0) continue;
    const double* wrow = &w.v[static_cast<std::size_t>(o) * in_dim];
    double* dwrow = &dw.v[static_cast<std::size_t>(o) * in_dim];
    if (dx) {
      double* dxp = dx->v.data();
      for (int i = 0; i < in_dim; ++i) {
        dxp[i] += wrow[i] * u;
        dwrow[i] += x[i] * u;
      }
    } else {
      for (int i = 0; i < in_dim; ++i) dwrow[i] += x[i] * u;
    }
  }
}

}  // namespace detail

inline Rollout forward_rollout(const FeatureMap& fm, const BoundingBox& proposal,
                               const AODParams& params, const ActionPlan& plan,
                               RunMode mode, std::uint64_t dropout_seed) {
  const AODConfig& cfg = params.config;
  require_valid(proposal, "forward_rollout proposal");
  const int horizon = cfg.T;
  if (plan.noise && static_cast<int>(plan.noise->size()) != horizon - 1) {
    throw ContractError("forward_rollout: noise list must have T-1 entries");
  }
  if (plan.pinned && static_cast<int>(plan.pinned->size()) != horizon - 1) {
    throw ContractError("forward_rollout: pinned action list must have T-1 entries");
  }

  Rollout r;
  r.states.reserve(horizon);
  r.steps.resize(horizon);

  OpAttrs drop_attrs;
  drop_attrs.rate = cfg.dropout_rate;
  drop_attrs.train = (mode == RunMode::train);

  auto keep = [&r](Tensor t) -> const Tensor* {
    r.acts.push_back(std::move(t));
    return &r.acts.back();
  };

  const Tensor* h6_prev = keep(Tensor({cfg.fc6_dim}));
  const Tensor* h7_prev = keep(Tensor({cfg.fc7_dim}));
  const Tensor* hg_prev = keep(Tensor({cfg.glimpse_embed_dim}));

  std::vector<const Tensor*> combined_ptrs;
  BoundingBox box = proposal;
  GlimpseDelta incoming_delta{};  // delta that produced the current box; zero at t=1

  for (int t = 1; t <= horizon; ++t) {
    Rollout::StepTape& tape = r.steps[t - 1];

    const BoundingBox pool_box = clip_box(box, fm.image_w, fm.image_h);
    auto [f, roi_rec] = roi_pool(fm, pool_box, cfg.roi_grid_h, cfg.roi_grid_w);
    tape.roi = std::move(roi_rec);
    const Tensor* f_t = keep(std::move(f));

    // fc6 (recurrent when stacked)
    OpAttrs a6;
    a6.has_bias = true;
    std::vector<const Tensor*> in6;
    if (cfg.stacked_rnn) {
      a6.terms = 2;
      in6 = {f_t, &params.w6.value, h6_prev, &params.r6.value, &params.b6.value};
    } else {
      a6.terms = 1;
      in6 = {f_t, &params.w6.value, &params.b6.value};
    }
    auto [z6, rec6] = forward(OpKind::affine, std::move(in6), a6);
    tape.fc6 = std::move(rec6);
    const Tensor* z6_t = keep(std::move(z6));
    auto [a6out, rrec6] = forward(OpKind::relu, {z6_t}, {});
    tape.relu6 = std::move(rrec6);
    const Tensor* relu6_t = keep(std::move(a6out));
    Rng drop_rng6 = Rng::stream(dropout_seed, static_cast<std::uint64_t>(t), 0);
    auto [h6, drec6] = forward(OpKind::dropout, {relu6_t}, drop_attrs, &drop_rng6);
    tape.drop6 = std::move(drec6);
    const Tensor* h6_t = keep(std::move(h6));
    detail::check_step_finite(*h6_t, t, "fc6");

    // fc7 (always recurrent)
    OpAttrs a7;
    a7.terms = 2;
    auto [z7, rec7] = forward(
        OpKind::affine, {h6_t, &params.w7.value, h7_prev, &params.r7.value, &params.b7.value},
        a7);
    tape.fc7 = std::move(rec7);
    const Tensor* z7_t = keep(std::move(z7));
    auto [a7out, rrec7] = forward(OpKind::relu, {z7_t}, {});
    tape.relu7 = std::move(rrec7);
    const Tensor* relu7_t = keep(std::move(a7out));
    Rng drop_rng7 = Rng::stream(dropout_seed, static_cast<std::uint64_t>(t), 1);
    auto [h7, drec7] = forward(OpKind::dropout, {relu7_t}, drop_attrs, &drop_rng7);
    tape.drop7 = std::move(drec7);
    const Tensor* h7_t = keep(std::move(h7));
    detail::check_step_finite(*h7_t, t, "fc7");

    // glimpse-vector embedding; consumes the incoming action as a constant
    const Tensor* delta_t = keep(Tensor(
        {4}, {incoming_delta.dx, incoming_delta.dy, incoming_delta.dw, incoming_delta.dh}));
    OpAttrs ag;
    ag.terms = 2;
    auto [zg, recg] = forward(
        OpKind::affine, {delta_t, &params.wg.value, hg_prev, &params.rg.value, &params.bg.value},
        ag);
    tape.emb = std::move(recg);
    const Tensor* zg_t = keep(std::move(zg));
    auto [agout, rrecg] = forward(OpKind::relu, {zg_t}, {});
    tape.relug = std::move(rrecg);
    const Tensor* hg_t = keep(std::move(agout));
    detail::check_step_finite(*hg_t, t, "glimpse embed");

    auto [comb, catrec] = forward(OpKind::concat, {h7_t, hg_t}, {});
    tape.cat = std::move(catrec);
    const Tensor* comb_t = keep(std::move(comb));
    combined_ptrs.push_back(comb_t);

    StepState state;
    state.t = t;
    state.glimpse_box = box;
    state.h6 = *h6_t;
    state.h7 = *h7_t;
    state.hg = *hg_t;
    state.combined = *comb_t;

    if (t < horizon) {
      OpAttrs agl;
      agl.terms = 1;
      agl.has_bias = false;
      auto [mu, recmu] =
          forward(OpKind::affine, {comb_t, &params.wglimpse[t - 1].value}, agl);
      tape.has_glimpse = true;
      tape.glimpse = std::move(recmu);
      keep(std::move(mu));
      const Tensor& mu_ref = r.acts.back();

      GlimpseDelta mean{mu_ref[0], mu_ref[1], mu_ref[2], mu_ref[3]};
      if (cfg.glimpse_dof == 2) {
        mean.dw = 0.0;
        mean.dh = 0.0;
      }
      state.action_mean = mean;
      GlimpseDelta action;
      if (plan.pinned) {
        action = (*plan.pinned)[t - 1];
      } else {
        action = mean;
        if (plan.noise) {
          const GlimpseDelta& n = (*plan.noise)[t - 1];
          action.dx += n.dx;
          action.dy += n.dy;
          if (cfg.glimpse_dof == 4) {
            action.dw += n.dw;
            action.dh += n.dh;
          }
        }
      }
      if (!action.finite()) {
        throw DivergenceError("forward_rollout: non-finite glimpse action at step " +
                              std::to_string(t));
      }
      state.glimpse_delta = action;
      // all glimpses are anchored at the proposal box
      box = decode_glimpse(action, proposal);
      incoming_delta = action;
    }

    r.states.push_back(std::move(state));
    h6_prev = h6_t;
    h7_prev = h7_t;
    hg_prev = hg_t;
  }

  // fuse per-step features, then classify and regress
  const Tensor* fused = nullptr;
  if (cfg.eltwise_max) {
    auto [fz, frec] = forward(OpKind::eltwise_max,
                              std::vector<const Tensor*>(combined_ptrs.begin(),
                                                         combined_ptrs.end()),
                              {});
    r.fuse = std::move(frec);
    r.fused_is_max = true;
    fused = keep(std::move(fz));
  } else {
    r.fused_is_max = false;
    r.fused_step = horizon;
    fused = combined_ptrs.back();
  }

  auto [logits, crec] = forward(OpKind::affine, {fused, &params.cls_w.value, &params.cls_b.value}, {});
  r.cls = std::move(crec);
  const Tensor* logits_t = keep(std::move(logits));
  auto [braw, rrec] = forward(OpKind::affine, {fused, &params.reg_w.value, &params.reg_b.value}, {});
  r.reg = std::move(rrec);
  const Tensor* braw_t = keep(std::move(braw));
  detail::check_step_finite(*logits_t, horizon, "classifier");
  detail::check_step_finite(*braw_t, horizon, "regressor");

  r.output.class_logits = *logits_t;
  r.output.class_probs = softmax(*logits_t);
  r.output.bbox_raw = *braw_t;
  r.output.bbox_deltas.reserve(cfg.K);
  for (int c = 0; c < cfg.K; ++c) {
    r.output.bbox_deltas.push_back(GlimpseDelta{(*braw_t)[4 * c + 0], (*braw_t)[4 * c + 1],
                                                (*braw_t)[4 * c + 2], (*braw_t)[4 * c + 3]});
  }
  return r;
}

// Loss-convention gradients on the two supervised outputs.
struct SupervisedGrads {
  Tensor dlogits;   // K+1
  Tensor dbbox_raw; // 4K
};

// BPTT over one recorded rollout. Supervised gradients enter at the heads and
// never reach the glimpse layers (the action is a constant to its consumers);
// action-mean gradients enter at mu_t and never reach the heads. Shared layers
// accumulate both. Feature-map gradients sum into dfm for a later backbone
// backward pass.
inline void backward_rollout(const Rollout& r, const AODParams& params,
                             const SupervisedGrads* sup,
                             const std::vector<GlimpseDelta>* dmu, GradSink& sink,
                             Tensor& dfm) {
  const AODConfig& cfg = params.config;
  const int horizon = cfg.T;
  if (dmu && static_cast<int>(dmu->size()) != horizon - 1) {
    throw ContractError("backward_rollout: dmu must have T-1 entries");
  }

  std::vector<Tensor> dcombined(horizon, Tensor({cfg.combined_dim()}));

  if (sup) {
    if (sup->dlogits.shape != r.output.class_logits.shape ||
        sup->dbbox_raw.shape != r.output.bbox_raw.shape) {
      throw ShapeError("backward_rollout: supervised grad shapes mismatch");
    }
    Tensor dfused({cfg.combined_dim()});
    detail::affine_backward_accum(sup->dlogits, *r.cls.inputs[0], params.cls_w.value, &dfused,
                                  sink.of(params.cls_w));
    sink.accumulate(params.cls_b, sup->dlogits);
    detail::affine_backward_accum(sup->dbbox_raw, *r.reg.inputs[0], params.reg_w.value, &dfused,
                                  sink.of(params.reg_w));
    sink.accumulate(params.reg_b, sup->dbbox_raw);

    if (r.fused_is_max) {
      for (std::size_t i = 0; i < dfused.numel(); ++i) {
        dcombined[r.fuse.iaux[i]][i] += dfused[i];
      }
    } else {
      for (std::size_t i = 0; i < dfused.numel(); ++i) {
        dcombined[r.fused_step - 1][i] += dfused[i];
      }
    }
  }

  if (dmu) {
    for (int t = 1; t < horizon; ++t) {
      const GlimpseDelta& g = (*dmu)[t - 1];
      Tensor du({4}, {g.dx, g.dy, g.dw, g.dh});
      if (cfg.glimpse_dof == 2) {
        du[2] = 0.0;
        du[3] = 0.0;
      }
      const Rollout::StepTape& tape = r.steps[t - 1];
      detail::affine_backward_accum(du, *tape.glimpse.inputs[0],
                                    params.wglimpse[t - 1].value, &dcombined[t - 1],
                                    sink.of(params.wglimpse[t - 1]));
    }
  }

  Tensor dh6_carry({cfg.fc6_dim});
  Tensor dh7_carry({cfg.fc7_dim});
  Tensor dhg_carry({cfg.glimpse_embed_dim});

  for (int t = horizon; t >= 1; --t) {
    const Rollout::StepTape& tape = r.steps[t - 1];

    // combined -> (h7, hg)
    Tensor dh7 = std::move(dh7_carry);
    Tensor dhg = std::move(dhg_carry);
    const Tensor& dcomb = dcombined[t - 1];
    for (int i = 0; i < cfg.fc7_dim; ++i) dh7[i] += dcomb[i];
    for (int i = 0; i < cfg.glimpse_embed_dim; ++i) dhg[i] += dcomb[cfg.fc7_dim + i];

    // glimpse embed chain: relu then affine; the action input is a constant
    std::vector<Tensor> gg = backward(tape.relug, dhg);
    detail::affine_backward_accum(gg[0], *tape.emb.inputs[0], params.wg.value, nullptr,
                                  sink.of(params.wg));
    dhg_carry = Tensor({cfg.glimpse_embed_dim});
    detail::affine_backward_accum(gg[0], *tape.emb.inputs[2], params.rg.value, &dhg_carry,
                                  sink.of(params.rg));
    sink.accumulate(params.bg, gg[0]);

    // fc7 chain
    Tensor dh7_post = backward(tape.drop7, dh7)[0];
    Tensor dz7 = std::move(backward(tape.relu7, dh7_post)[0]);
    Tensor dh6({cfg.fc6_dim});
    detail::affine_backward_accum(dz7, *tape.fc7.inputs[0], params.w7.value, &dh6,
                                  sink.of(params.w7));
    dh7_carry = Tensor({cfg.fc7_dim});
    detail::affine_backward_accum(dz7, *tape.fc7.inputs[2], params.r7.value, &dh7_carry,
                                  sink.of(params.r7));
    sink.accumulate(params.b7, dz7);

    // fc6 chain
    for (int i = 0; i < cfg.fc6_dim; ++i) dh6[i] += dh6_carry[i];
    Tensor dh6_post = backward(tape.drop6, dh6)[0];
    Tensor dz6 = std::move(backward(tape.relu6, dh6_post)[0]);
    Tensor df({cfg.roi_feat_dim()});
    detail::affine_backward_accum(dz6, *tape.fc6.inputs[0], params.w6.value, &df,
                                  sink.of(params.w6));
    dh6_carry = Tensor({cfg.fc6_dim});
    if (cfg.stacked_rnn) {
      detail::affine_backward_accum(dz6, *tape.fc6.inputs[2], params.r6.value, &dh6_carry,
                                    sink.of(params.r6));
    }
    sink.accumulate(params.b6, dz6);

    roi_pool_backward(tape.roi, df, dfm);
  }
}

}  // namespace aod
