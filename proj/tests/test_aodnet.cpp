#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "aod/aodnet.hpp"
#include "aod/netcheck.hpp"

using aod::ActionPlan;
using aod::AODConfig;
using aod::AODParams;
using aod::BoundingBox;
using aod::GlimpseDelta;
using aod::Rollout;
using aod::RunMode;
using aod::Tensor;

namespace {

AODConfig tiny_config() {
  AODConfig cfg;
  cfg.T = 3;
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

aod::FeatureMap tiny_fm(const AODParams& params) {
  Tensor image({1, 16, 16});
  aod::Rng rng(99);
  for (double& v : image.v) v = rng.uniform(0.0, 1.0);
  return aod::extract_features(image, params.backbone);
}

}  // namespace

TEST_SUITE("aodnet") {

TEST_CASE("init_params is deterministic in the seed") {
  const AODConfig cfg = tiny_config();
  AODParams a = aod::init_params(cfg, 7);
  AODParams b = aod::init_params(cfg, 7);
  AODParams c = aod::init_params(cfg, 8);
  const auto la = a.param_list(), lb = b.param_list(), lc = c.param_list();
  REQUIRE(la.size() == lb.size());
  bool any_diff_c = false;
  for (std::size_t i = 0; i < la.size(); ++i) {
    CHECK(la[i]->value.v == lb[i]->value.v);
    if (la[i]->value.v != lc[i]->value.v) any_diff_c = true;
  }
  CHECK(any_diff_c);
}

TEST_CASE("glimpse layers init at std 1e-4 with no bias; biases are zero") {
  AODConfig cfg;
  cfg.T = 3;
  cfg.K = 3;
  cfg.fc6_dim = 16;
  cfg.fc7_dim = 1300;  // 4*(1300+32)*2 > 1e4 entries across the glimpse layers
  cfg.glimpse_embed_dim = 32;
  AODParams p = aod::init_params(cfg, 3);

  REQUIRE(p.wglimpse.size() == 2);
  double sq = 0.0;
  std::size_t n = 0;
  for (const aod::Parameter& w : p.wglimpse) {
    for (double v : w.value.v) {
      sq += v * v;
      ++n;
    }
  }
  REQUIRE(n >= 10000);
  const double std_hat = std::sqrt(sq / n);
  CHECK(std_hat > 0.8e-4);
  CHECK(std_hat < 1.2e-4);

  for (const aod::Parameter* b : {&p.b6, &p.b7, &p.bg, &p.cls_b, &p.reg_b}) {
    for (double v : b->value.v) CHECK(v == 0.0);
  }
}

TEST_CASE("rollout is deterministic and emits a probability simplex") {
  AODParams params = aod::init_params(tiny_config(), 5);
  const aod::FeatureMap fm = tiny_fm(params);
  const BoundingBox proposal{8, 8, 6, 6};

  Rollout a = aod::forward_rollout(fm, proposal, params, ActionPlan{}, RunMode::eval, 0);
  Rollout b = aod::forward_rollout(fm, proposal, params, ActionPlan{}, RunMode::eval, 0);
  CHECK(a.output.class_probs.v == b.output.class_probs.v);
  CHECK(a.output.bbox_raw.v == b.output.bbox_raw.v);

  double sum = 0.0;
  for (double v : a.output.class_probs.v) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(std::abs(sum - 1.0) < 1e-9);

  // train mode with a fixed dropout seed is reproducible too
  Rollout c = aod::forward_rollout(fm, proposal, params, ActionPlan{}, RunMode::train, 42);
  Rollout d = aod::forward_rollout(fm, proposal, params, ActionPlan{}, RunMode::train, 42);
  CHECK(c.output.class_probs.v == d.output.class_probs.v);
}

TEST_CASE("T=1 has no glimpse layers and never evaluates one") {
  AODConfig cfg = tiny_config();
  cfg.T = 1;
  AODParams params = aod::init_params(cfg, 5);
  CHECK(params.wglimpse.empty());
  const aod::FeatureMap fm = tiny_fm(params);
  Rollout r = aod::forward_rollout(fm, BoundingBox{8, 8, 6, 6}, params, ActionPlan{},
                                   RunMode::eval, 0);
  CHECK(r.states.size() == 1);
  CHECK(!r.steps[0].has_glimpse);
  CHECK(r.states[0].glimpse_box == BoundingBox{8, 8, 6, 6});
}

TEST_CASE("first glimpse box equals the proposal; early actions are near zero at init") {
  AODParams params = aod::init_params(tiny_config(), 21);
  const aod::FeatureMap fm = tiny_fm(params);
  const BoundingBox proposal{7.5, 9.0, 8.0, 5.0};
  Rollout r = aod::forward_rollout(fm, proposal, params, ActionPlan{}, RunMode::eval, 0);
  CHECK(r.states[0].glimpse_box == proposal);
  const GlimpseDelta a1 = r.states[0].glimpse_delta;
  CHECK(std::abs(a1.dx) <= 1e-2);
  CHECK(std::abs(a1.dy) <= 1e-2);
  CHECK(std::abs(a1.dw) <= 1e-2);
  CHECK(std::abs(a1.dh) <= 1e-2);
}

TEST_CASE("action bookkeeping: a_t - mu_t equals the injected noise exactly") {
  AODParams params = aod::init_params(tiny_config(), 13);
  const aod::FeatureMap fm = tiny_fm(params);
  const std::vector<GlimpseDelta> noise = {{0.15, -0.2, 0.1, 0.05}, {-0.3, 0.02, -0.07, 0.4}};
  ActionPlan plan;
  plan.noise = &noise;
  Rollout r =
      aod::forward_rollout(fm, BoundingBox{8, 8, 6, 6}, params, plan, RunMode::eval, 0);
  for (int t = 0; t < 2; ++t) {
    const auto& s = r.states[t];
    CHECK(s.glimpse_delta.dx - s.action_mean.dx == noise[t].dx);
    CHECK(s.glimpse_delta.dy - s.action_mean.dy == noise[t].dy);
    CHECK(s.glimpse_delta.dw - s.action_mean.dw == noise[t].dw);
    CHECK(s.glimpse_delta.dh - s.action_mean.dh == noise[t].dh);
  }
}

TEST_CASE("2-dof glimpses keep scale components at zero") {
  AODConfig cfg = tiny_config();
  cfg.glimpse_dof = 2;
  AODParams params = aod::init_params(cfg, 13);
  const aod::FeatureMap fm = tiny_fm(params);
  const std::vector<GlimpseDelta> noise = {{0.15, -0.2, 0.35, -0.4}, {-0.3, 0.02, 0.5, 0.6}};
  ActionPlan plan;
  plan.noise = &noise;
  const BoundingBox proposal{8, 8, 6, 5};
  Rollout r = aod::forward_rollout(fm, proposal, params, plan, RunMode::eval, 0);
  for (int t = 0; t < 2; ++t) {
    CHECK(r.states[t].glimpse_delta.dw == 0.0);
    CHECK(r.states[t].glimpse_delta.dh == 0.0);
  }
  // shifted only, same size
  CHECK(r.states[1].glimpse_box.w == doctest::Approx(proposal.w));
  CHECK(r.states[1].glimpse_box.h == doctest::Approx(proposal.h));
}

TEST_CASE("element-wise max fusion is order independent") {
  AODParams params = aod::init_params(tiny_config(), 31);
  const aod::FeatureMap fm = tiny_fm(params);
  const std::vector<GlimpseDelta> noise = {{0.2, 0.1, -0.2, 0.3}, {-0.1, -0.3, 0.2, -0.2}};
  ActionPlan plan;
  plan.noise = &noise;
  Rollout r =
      aod::forward_rollout(fm, BoundingBox{8, 8, 7, 7}, params, plan, RunMode::eval, 0);

  std::vector<Tensor> combined;
  for (const auto& s : r.states) combined.push_back(s.combined);
  auto fuse = [](const std::vector<Tensor>& ts) {
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : ts) ptrs.push_back(&t);
    return aod::forward(aod::OpKind::eltwise_max, ptrs).first;
  };
  const Tensor base = fuse(combined);
  const std::vector<Tensor> shuffled = {combined[2], combined[0], combined[1]};
  CHECK(fuse(shuffled).v == base.v);
  const std::vector<Tensor> reversed = {combined[2], combined[1], combined[0]};
  CHECK(fuse(reversed).v == base.v);
}

TEST_CASE("stacked_rnn=false removes the fc6 recurrence parameter") {
  AODConfig cfg = tiny_config();
  cfg.stacked_rnn = false;
  AODParams params = aod::init_params(cfg, 3);
  for (const aod::Parameter* p : params.param_list()) CHECK(p->name != "r6");
  const aod::FeatureMap fm = tiny_fm(params);
  CHECK_NOTHROW(aod::forward_rollout(fm, BoundingBox{8, 8, 6, 6}, params, ActionPlan{},
                                     RunMode::eval, 0));
}

TEST_CASE("gradient masking per source") {
  AODParams params = aod::init_params(tiny_config(), 17);
  // generic weights so gradients are non-trivial
  aod::Rng rng(4);
  for (aod::Parameter* p : params.param_list()) {
    for (double& v : p->value.v) v = rng.uniform(-0.3, 0.3);
  }
  const aod::FeatureMap fm = tiny_fm(params);
  const BoundingBox proposal{8, 8, 6, 6};
  Rollout r = aod::forward_rollout(fm, proposal, params, ActionPlan{}, RunMode::eval, 0);

  aod::SupervisedGrads sup;
  sup.dlogits = Tensor({4}, {0.3, -0.2, 0.5, -0.6});
  sup.dbbox_raw = Tensor({12});
  for (int i = 0; i < 12; ++i) sup.dbbox_raw[i] = 0.1 * (i - 6);

  std::vector<GlimpseDelta> dmu = {{0.4, -0.2, 0.3, 0.1}, {-0.5, 0.2, -0.1, 0.6}};

  auto grads_norm = [&](const aod::Parameter& p, aod::GradSink& sink) {
    double s = 0.0;
    for (double v : sink.of(p).v) s += std::abs(v);
    return s;
  };

  SUBCASE("zero sources give zero grads") {
    aod::GradSink sink(params.param_list());
    Tensor dfm(fm.t.shape);
    aod::backward_rollout(r, params, nullptr, nullptr, sink, dfm);
    for (aod::Parameter* p : params.param_list()) CHECK(grads_norm(*p, sink) == 0.0);
  }

  SUBCASE("supervised-only leaves every glimpse layer untouched, reaches shared layers") {
    aod::GradSink sink(params.param_list());
    Tensor dfm(fm.t.shape);
    aod::backward_rollout(r, params, &sup, nullptr, sink, dfm);
    for (const aod::Parameter& w : params.wglimpse) CHECK(grads_norm(w, sink) == 0.0);
    CHECK(grads_norm(params.cls_w, sink) > 0.0);
    CHECK(grads_norm(params.w6, sink) > 0.0);
    CHECK(grads_norm(params.w7, sink) > 0.0);
    CHECK(grads_norm(params.wg, sink) > 0.0);
  }

  SUBCASE("reinforce-only leaves the heads untouched, reaches shared layers") {
    aod::GradSink sink(params.param_list());
    Tensor dfm(fm.t.shape);
    aod::backward_rollout(r, params, nullptr, &dmu, sink, dfm);
    CHECK(grads_norm(params.cls_w, sink) == 0.0);
    CHECK(grads_norm(params.cls_b, sink) == 0.0);
    CHECK(grads_norm(params.reg_w, sink) == 0.0);
    CHECK(grads_norm(params.reg_b, sink) == 0.0);
    for (const aod::Parameter& w : params.wglimpse) CHECK(grads_norm(w, sink) > 0.0);
    CHECK(grads_norm(params.w6, sink) > 0.0);
  }
}

TEST_CASE("divergent activations raise an error naming the step") {
  AODParams params = aod::init_params(tiny_config(), 3);
  params.w6.value.fill(1e308);
  const aod::FeatureMap fm = tiny_fm(params);
  CHECK_THROWS_WITH_AS(
      aod::forward_rollout(fm, BoundingBox{8, 8, 6, 6}, params, ActionPlan{}, RunMode::eval,
                           0),
      doctest::Contains("step 1"), aod::DivergenceError);
}

TEST_CASE("composite supervised loss passes the finite-difference check everywhere") {
  for (const aod::CheckEntry& e : aod::network_grad_check(1e-5)) {
    INFO(e.group);
    CHECK(e.max_rel_error < 1e-4);
  }
}

TEST_CASE("architecture variants pass the finite-difference check too") {
  SUBCASE("recurrence only at fc7") {
    AODConfig cfg = aod::tiny_check_config();
    cfg.stacked_rnn = false;
    for (const aod::CheckEntry& e : aod::network_grad_check_for(cfg, 1e-5)) {
      INFO(e.group);
      CHECK(e.max_rel_error < 1e-4);
    }
  }
  SUBCASE("no element-wise max fusion") {
    AODConfig cfg = aod::tiny_check_config();
    cfg.eltwise_max = false;
    for (const aod::CheckEntry& e : aod::network_grad_check_for(cfg, 1e-5)) {
      INFO(e.group);
      CHECK(e.max_rel_error < 1e-4);
    }
  }
  SUBCASE("2-dof glimpses, three steps") {
    AODConfig cfg = aod::tiny_check_config();
    cfg.T = 3;
    cfg.glimpse_dof = 2;
    for (const aod::CheckEntry& e : aod::network_grad_check_for(cfg, 1e-5)) {
      INFO(e.group);
      CHECK(e.max_rel_error < 1e-4);
    }
  }
}

}  // TEST_SUITE
