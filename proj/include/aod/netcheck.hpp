#pragma once

#include <string>
#include <vector>

#include "aod/gradcheck.hpp"
#include "aod/trainer.hpp"

namespace aod {

struct CheckEntry {
  std::string group;
  double max_rel_error = 0.0;
};

namespace detail {

inline double tensor_sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.v) s += v;
  return s;
}

inline Tensor ones(const std::vector<int>& shape) {
  Tensor t(shape);
  t.fill(1.0);
  return t;
}

}  // namespace detail

// Finite-difference conformance for each op kind at a fixed generic point.
inline std::vector<CheckEntry> op_grad_checks(double eps = 1e-5) {
  std::vector<CheckEntry> entries;
  Rng rng(0x9c0ffee);

  auto fill = [&](Tensor& t, double lo, double hi) {
    for (double& v : t.v) v = rng.uniform(lo, hi);
  };
  auto away_from = [&](Tensor& t, double point, double margin) {
    for (double& v : t.v) {
      if (std::abs(std::abs(v) - point) < margin) v += 3.0 * margin;
    }
  };

  {
    Tensor x({6}), w({4, 6}), x2({4}), w2({4, 4}), b({4});
    fill(x, -1, 1);
    fill(w, -1, 1);
    fill(x2, -1, 1);
    fill(w2, -1, 1);
    fill(b, -1, 1);
    OpAttrs attrs;
    attrs.terms = 2;
    double worst = 0.0;
    const std::vector<Tensor*> probes = {&x, &w, &x2, &w2, &b};
    for (std::size_t pi = 0; pi < probes.size(); ++pi) {
      auto f = [&](const Tensor& probe) {
        Tensor save = *probes[pi];
        *probes[pi] = probe;
        auto [out, rec] = forward(OpKind::affine, {&x, &w, &x2, &w2, &b}, attrs);
        *probes[pi] = save;
        return detail::tensor_sum(out);
      };
      auto g = [&](const Tensor& probe) {
        Tensor save = *probes[pi];
        *probes[pi] = probe;
        auto [out, rec] = forward(OpKind::affine, {&x, &w, &x2, &w2, &b}, attrs);
        Tensor grad = backward(rec, detail::ones(out.shape))[pi];
        *probes[pi] = save;
        return grad;
      };
      worst = std::max(worst, grad_check(f, g, *probes[pi], eps).max_rel_error);
    }
    entries.push_back({"affine", worst});
  }
  {
    Tensor x({16});
    fill(x, -2, 2);
    away_from(x, 0.0, 0.05);
    auto f = [&](const Tensor& p) {
      return detail::tensor_sum(forward(OpKind::relu, {&p}).first);
    };
    auto g = [&](const Tensor& p) {
      auto [out, rec] = forward(OpKind::relu, {&p});
      return backward(rec, detail::ones(out.shape))[0];
    };
    entries.push_back({"relu", grad_check(f, g, x, eps).max_rel_error});
  }
  {
    Tensor x({12});
    fill(x, 0.5, 2.0);
    OpAttrs attrs;
    attrs.train = true;
    attrs.rate = 0.5;
    auto f = [&](const Tensor& p) {
      Rng r(77);
      return detail::tensor_sum(forward(OpKind::dropout, {&p}, attrs, &r).first);
    };
    auto g = [&](const Tensor& p) {
      Rng r(77);
      auto [out, rec] = forward(OpKind::dropout, {&p}, attrs, &r);
      return backward(rec, detail::ones(out.shape))[0];
    };
    entries.push_back({"dropout", grad_check(f, g, x, eps).max_rel_error});
  }
  {
    Tensor x({2, 6, 6}), w({3, 2, 3, 3}), b({3});
    fill(x, -1, 1);
    fill(w, -1, 1);
    fill(b, -1, 1);
    OpAttrs attrs;
    attrs.pad = 1;
    double worst = 0.0;
    const std::vector<Tensor*> probes = {&x, &w, &b};
    for (std::size_t pi = 0; pi < probes.size(); ++pi) {
      auto f = [&](const Tensor& probe) {
        Tensor save = *probes[pi];
        *probes[pi] = probe;
        auto [out, rec] = forward(OpKind::conv2d, {&x, &w, &b}, attrs);
        *probes[pi] = save;
        return detail::tensor_sum(out);
      };
      auto g = [&](const Tensor& probe) {
        Tensor save = *probes[pi];
        *probes[pi] = probe;
        auto [out, rec] = forward(OpKind::conv2d, {&x, &w, &b}, attrs);
        Tensor grad = backward(rec, detail::ones(out.shape))[pi];
        *probes[pi] = save;
        return grad;
      };
      worst = std::max(worst, grad_check(f, g, *probes[pi], eps).max_rel_error);
    }
    entries.push_back({"conv2d", worst});
  }
  {
    Tensor x({2, 6, 6});
    // distinct values keep the argmax stable under probing
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = 0.37 * static_cast<double>(i % 13) + 0.011 * i;
    OpAttrs attrs;
    attrs.kernel = 2;
    attrs.stride = 2;
    auto f = [&](const Tensor& p) {
      return detail::tensor_sum(forward(OpKind::maxpool2d, {&p}, attrs).first);
    };
    auto g = [&](const Tensor& p) {
      auto [out, rec] = forward(OpKind::maxpool2d, {&p}, attrs);
      return backward(rec, detail::ones(out.shape))[0];
    };
    entries.push_back({"maxpool2d", grad_check(f, g, x, eps).max_rel_error});
  }
  {
    Tensor logits({9});
    fill(logits, -2, 2);
    OpAttrs attrs;
    attrs.target = 2;
    auto f = [&](const Tensor& p) {
      return forward(OpKind::softmax_xent, {&p}, attrs).first[0];
    };
    auto g = [&](const Tensor& p) {
      auto [out, rec] = forward(OpKind::softmax_xent, {&p}, attrs);
      return backward(rec, Tensor({1}, {1.0}))[0];
    };
    entries.push_back({"softmax_xent", grad_check(f, g, logits, eps).max_rel_error});
  }
  {
    Tensor x({10});
    fill(x, -3, 3);
    away_from(x, 1.0, 0.05);
    away_from(x, 0.0, 0.05);
    auto f = [&](const Tensor& p) {
      return forward(OpKind::smooth_l1, {&p}).first[0];
    };
    auto g = [&](const Tensor& p) {
      auto [out, rec] = forward(OpKind::smooth_l1, {&p});
      return backward(rec, Tensor({1}, {1.0}))[0];
    };
    entries.push_back({"smooth_l1", grad_check(f, g, x, eps).max_rel_error});
  }
  {
    Tensor a({8}), b({8});
    fill(a, -1, 1);
    fill(b, -1, 1);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      if (std::abs(a[i] - b[i]) < 0.05) a[i] += 0.2;
    }
    auto f = [&](const Tensor& p) {
      return detail::tensor_sum(forward(OpKind::eltwise_max, {&p, &b}).first);
    };
    auto g = [&](const Tensor& p) {
      auto [out, rec] = forward(OpKind::eltwise_max, {&p, &b});
      return backward(rec, detail::ones(out.shape))[0];
    };
    entries.push_back({"eltwise_max", grad_check(f, g, a, eps).max_rel_error});
  }
  {
    Tensor a({3}), b({5});
    fill(a, -1, 1);
    fill(b, -1, 1);
    auto f = [&](const Tensor& p) {
      return detail::tensor_sum(forward(OpKind::concat, {&p, &b}).first);
    };
    auto g = [&](const Tensor& p) {
      auto [out, rec] = forward(OpKind::concat, {&p, &b});
      return backward(rec, detail::ones(out.shape))[0];
    };
    entries.push_back({"concat", grad_check(f, g, a, eps).max_rel_error});
  }
  return entries;
}

inline AODConfig tiny_check_config() {
  AODConfig cfg;
  cfg.T = 2;
  cfg.K = 3;
  cfg.fc6_dim = 8;
  cfg.fc7_dim = 8;
  cfg.glimpse_embed_dim = 8;
  cfg.roi_grid_h = 2;
  cfg.roi_grid_w = 2;
  cfg.backbone_c1 = 4;
  cfg.backbone_c2 = 8;
  return cfg;
}

// Composite supervised loss through the whole network (tiny dims, T=2),
// checked against central differences for every parameter. Actions are pinned
// to recorded values and dropout runs in eval mode so the probed function is
// deterministic and smooth almost everywhere; parameters are re-randomized to
// a generic O(1) point so the comparison has teeth. A nonzero sabotage value
// is added to one analytic coordinate per parameter, as a negative control
// proving the checker catches a broken backward.
inline std::vector<CheckEntry> network_grad_check_for(const AODConfig& cfg,
                                                      double eps = 1e-5,
                                                      double sabotage = 0.0) {
  AODParams params = init_params(cfg, 11);
  Rng rng(0x5eed);
  for (Parameter* p : params.param_list()) {
    for (double& v : p->value.v) v = rng.uniform(-0.4, 0.4);
  }

  Tensor image({1, 6, 6});
  for (double& v : image.v) v = rng.uniform(0.0, 1.0);

  DetectionSample sample;
  sample.kind = SampleKind::foreground;
  sample.class_index = 1;
  sample.proposal = BoundingBox{3.0, 3.2, 4.0, 3.5};
  sample.matched_gt = BoundingBox{3.2, 3.0, 4.4, 3.8};
  sample.bbox_target = encode_glimpse(sample.matched_gt, sample.proposal);

  // record the noiseless actions once, then pin them
  std::vector<GlimpseDelta> pinned;
  {
    const FeatureMap fm = extract_features(image, params.backbone);
    const Rollout r = forward_rollout(fm, sample.proposal, params, ActionPlan{},
                                      RunMode::eval, 0);
    for (int t = 0; t + 1 < cfg.T; ++t) pinned.push_back(r.states[t].glimpse_delta);
  }
  ActionPlan plan;
  plan.pinned = &pinned;

  auto loss_now = [&]() {
    const FeatureMap fm = extract_features(image, params.backbone);
    const Rollout r =
        forward_rollout(fm, sample.proposal, params, plan, RunMode::eval, 0);
    return supervised_loss(r.output, sample).loss;
  };
  auto grads_now = [&](GradSink& sink) {
    BackboneTape tape;
    const FeatureMap fm = extract_features(image, params.backbone, &tape);
    const Rollout r =
        forward_rollout(fm, sample.proposal, params, plan, RunMode::eval, 0);
    const SupervisedLossResult res = supervised_loss(r.output, sample);
    Tensor dfm(fm.t.shape);
    backward_rollout(r, params, &res.grads, nullptr, sink, dfm);
    backbone_backward(tape, params.backbone, dfm, sink);
  };

  std::vector<CheckEntry> entries;
  for (Parameter* p : params.param_list()) {
    auto f = [&](const Tensor& probe) {
      Tensor save = p->value;
      p->value = probe;
      const double loss = loss_now();
      p->value = save;
      return loss;
    };
    auto g = [&](const Tensor& probe) {
      Tensor save = p->value;
      p->value = probe;
      GradSink sink(params.param_list());
      grads_now(sink);
      Tensor grad = sink.of(*p);
      p->value = save;
      grad[0] += sabotage;
      return grad;
    };
    entries.push_back({p->name, grad_check(f, g, p->value, eps).max_rel_error});
  }
  return entries;
}

inline std::vector<CheckEntry> network_grad_check(double eps = 1e-5, double sabotage = 0.0) {
  return network_grad_check_for(tiny_check_config(), eps, sabotage);
}

}  // namespace aod
