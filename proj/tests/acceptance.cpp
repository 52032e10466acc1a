// Acceptance suite: one PASS/FAIL line per criterion. Run all, or a single
// one with --only N. Exits nonzero if any executed criterion fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#define AOD_TESTSUPPORT_EVAL
#include "aod/ablate.hpp"
#include "aod/checkpoint.hpp"
#include "aod/config.hpp"
#include "aod/eval.hpp"
#include "aod/netcheck.hpp"
#include "aod/trainer.hpp"
#include "aod/voc_xml.hpp"
#include "test_support.hpp"

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1
Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_group;
  auto fold = [&](const std::vector<aod::CheckEntry>& entries) {
    for (const aod::CheckEntry& e : entries) {
      if (e.max_rel_error > worst) {
        worst = e.max_rel_error;
        worst_group = e.group;
      }
    }
  };
  fold(aod::op_grad_checks(1e-5));
  fold(aod::network_grad_check(1e-5));
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "max rel error %.3e (%s), %.1fs", worst,
                worst_group.c_str(), secs);
  return {worst < 1e-4 && secs < 120.0, buf};
}

// ---------------------------------------------------------------- criterion 2
Outcome criterion_roi_oracle() {
  const auto t0 = Clock::now();
  aod::Rng rng(0x4014);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto inst = testsupport::random_roi_instance(rng);
    const auto [out, rec] = aod::roi_pool(inst.fm, inst.box, inst.grid_h, inst.grid_w);
    const auto expect =
        testsupport::oracle_roi_pool(inst.fm, inst.box, inst.grid_h, inst.grid_w);
    if (out.v != expect) ++mismatches;
  }
  const double secs = seconds_since(t0);
  char buf[120];
  std::snprintf(buf, sizeof(buf), "%d/1000 mismatches, %.1fs", mismatches, secs);
  return {mismatches == 0 && secs < 30.0, buf};
}

// ---------------------------------------------------------------- criterion 3
Outcome criterion_return_normalization() {
  const auto t0 = Clock::now();
  aod::Rng rng(0x4e4e);
  double worst_mean = 0.0, worst_var = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int n = 2 + static_cast<int>(rng.below(15));
    std::vector<double> returns(n);
    double mean = 0.0;
    for (double& r : returns) {
      r = rng.uniform();
      mean += r;
    }
    mean /= n;
    double var = 0.0;
    for (double r : returns) var += (r - mean) * (r - mean);
    if (var / n < 1e-10) {
      --i;
      continue;
    }
    const std::vector<double> z = aod::normalize_returns(returns);
    double zm = 0.0, zv = 0.0;
    for (double v : z) zm += v;
    zm /= n;
    for (double v : z) zv += (v - zm) * (v - zm);
    zv /= n;
    worst_mean = std::max(worst_mean, std::abs(zm));
    worst_var = std::max(worst_var, std::abs(zv - 1.0));
  }
  bool constant_ok = true;
  for (double c : {0.0, 0.5, 1.0}) {
    for (double v : aod::normalize_returns({c, c, c, c})) {
      if (v != 0.0) constant_ok = false;
    }
  }
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "worst |mean| %.2e, worst |var-1| %.2e, constants %s, %.1fs",
                worst_mean, worst_var, constant_ok ? "zeroed" : "WRONG", secs);
  return {worst_mean <= 1e-9 && worst_var <= 1e-6 && constant_ok && secs < 5.0, buf};
}

// ---------------------------------------------------------------- criterion 4
Outcome criterion_bandit() {
  const auto t0 = Clock::now();
  // linear-Gaussian policy a ~ N(theta x, sigma^2 I4), quadratic reward
  // r = -|a - a*|^2; grad_theta E[r] = -2 (theta x - a*) x^T
  const std::vector<double> x = {1.0, 0.5, -0.5};
  const double sigma = 0.5;
  std::vector<double> theta(4 * 3);
  aod::Rng init(0x7e44);
  for (double& v : theta) v = init.uniform(-0.4, 0.4);
  const double target[4] = {0.2, -0.1, 0.3, 0.0};

  auto mu_of = [&](const std::vector<double>& th) {
    std::vector<double> mu(4, 0.0);
    for (int o = 0; o < 4; ++o) {
      for (int i = 0; i < 3; ++i) mu[o] += th[o * 3 + i] * x[i];
    }
    return mu;
  };
  auto j_of = [&](const std::vector<double>& th) {
    const auto mu = mu_of(th);
    double j = -4.0 * sigma * sigma;
    for (int o = 0; o < 4; ++o) j -= (mu[o] - target[o]) * (mu[o] - target[o]);
    return j;
  };

  // empirical Eq-1 estimate over 1e5 episodes against the closed form
  aod::Rng rng(0xbadd17);
  const auto mu0 = mu_of(theta);
  const int episodes = 100000;
  std::vector<double> returns(episodes);
  std::vector<std::vector<aod::GlimpseDelta>> noises(episodes,
                                                     std::vector<aod::GlimpseDelta>(1));
  for (int e = 0; e < episodes; ++e) {
    double n[4];
    double r = 0.0;
    for (int o = 0; o < 4; ++o) {
      n[o] = rng.normal(0.0, sigma);
      const double a = mu0[o] + n[o];
      r -= (a - target[o]) * (a - target[o]);
    }
    noises[e][0] = {n[0], n[1], n[2], n[3]};
    returns[e] = r;
  }
  const auto per_episode = aod::policy_gradient_core(returns, noises, sigma, 1.0);
  double mu_grad[4] = {0, 0, 0, 0};
  for (const auto& ep : per_episode) {
    mu_grad[0] += ep[0].dx;
    mu_grad[1] += ep[0].dy;
    mu_grad[2] += ep[0].dw;
    mu_grad[3] += ep[0].dh;
  }
  double err = 0.0, mag = 0.0;
  for (int o = 0; o < 4; ++o) {
    for (int i = 0; i < 3; ++i) {
      const double analytic = -2.0 * (mu0[o] - target[o]) * x[i];
      const double estimate = mu_grad[o] * x[i];
      err += (estimate - analytic) * (estimate - analytic);
      mag += analytic * analytic;
    }
  }
  const double rel = std::sqrt(err / mag);

  // 200 ascent steps must increase J
  const double j_start = j_of(theta);
  aod::Rng rng2(0xa5ce4d);
  const int per_step = 64;
  const double alpha = 0.02;
  for (int step = 0; step < 200; ++step) {
    const auto mu = mu_of(theta);
    std::vector<double> rs(per_step);
    std::vector<std::vector<aod::GlimpseDelta>> ns(per_step,
                                                   std::vector<aod::GlimpseDelta>(1));
    for (int e = 0; e < per_step; ++e) {
      double r = 0.0;
      double n[4];
      for (int o = 0; o < 4; ++o) {
        n[o] = rng2.normal(0.0, sigma);
        const double a = mu[o] + n[o];
        r -= (a - target[o]) * (a - target[o]);
      }
      ns[e][0] = {n[0], n[1], n[2], n[3]};
      rs[e] = r;
    }
    // per-sample return normalization, as in training
    const std::vector<double> adj = aod::normalize_returns(rs);
    const auto g = aod::policy_gradient_core(adj, ns, sigma, 1.0);
    double gm[4] = {0, 0, 0, 0};
    for (const auto& ep : g) {
      gm[0] += ep[0].dx;
      gm[1] += ep[0].dy;
      gm[2] += ep[0].dw;
      gm[3] += ep[0].dh;
    }
    for (int o = 0; o < 4; ++o) {
      for (int i = 0; i < 3; ++i) theta[o * 3 + i] += alpha * gm[o] * x[i];
    }
  }
  const double j_end = j_of(theta);
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "estimator rel err %.3f, J %.4f -> %.4f, %.1fs", rel,
                j_start, j_end, secs);
  return {rel < 0.05 && j_end > j_start && secs < 120.0, buf};
}

// ---------------------------------------------------------------- criterion 5
Outcome criterion_masking() {
  aod::SceneConfig scfg;
  scfg.K = 3;
  scfg.seed = 21;
  const aod::Dataset ds = aod::generate_dataset(scfg, 8);
  const auto pools = aod::label_dataset(ds);

  aod::TrainConfig cfg;
  cfg.net.T = 3;
  cfg.net.K = 3;
  cfg.net.fc6_dim = 16;
  cfg.net.fc7_dim = 16;
  cfg.net.glimpse_embed_dim = 8;
  cfg.net.backbone_c1 = 4;
  cfg.net.backbone_c2 = 8;
  cfg.fg_per_image = 4;
  cfg.bg_per_image = 8;
  cfg.rl.n_episodes = 4;
  cfg.seed = 5;

  const auto batch = aod::build_minibatch(pools, cfg, cfg.seed, 0);

  auto grad_abs = [](const aod::Parameter& p) {
    double s = 0.0;
    for (double v : p.grad.v) s += std::abs(v);
    return s;
  };

  // supervised source only
  aod::AODParams sup_params = aod::init_params(cfg.net, cfg.seed);
  {
    aod::TrainState state;
    aod::StepDebug dbg;
    dbg.suppress_reinforce = true;
    dbg.skip_update = true;
    aod::train_step(ds, batch, sup_params, cfg, 0, state, &dbg);
  }
  double sup_on_glimpse = 0.0;
  for (const aod::Parameter& w : sup_params.wglimpse) sup_on_glimpse += grad_abs(w);
  const double sup_on_heads = grad_abs(sup_params.cls_w) + grad_abs(sup_params.reg_w);

  // reinforce source only
  aod::AODParams rl_params = aod::init_params(cfg.net, cfg.seed);
  {
    aod::TrainState state;
    aod::StepDebug dbg;
    dbg.suppress_supervised = true;
    dbg.skip_update = true;
    aod::train_step(ds, batch, rl_params, cfg, 0, state, &dbg);
  }
  const double rl_on_heads = grad_abs(rl_params.cls_w) + grad_abs(rl_params.cls_b) +
                             grad_abs(rl_params.reg_w) + grad_abs(rl_params.reg_b);
  double rl_on_glimpse = 0.0;
  for (const aod::Parameter& w : rl_params.wglimpse) rl_on_glimpse += grad_abs(w);
  const double rl_on_shared = grad_abs(rl_params.w6) + grad_abs(rl_params.w7);

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "supervised->glimpse %.1e (heads %.1e), reinforce->heads %.1e (glimpse %.1e, "
                "shared %.1e)",
                sup_on_glimpse, sup_on_heads, rl_on_heads, rl_on_glimpse, rl_on_shared);
  const bool pass = sup_on_glimpse == 0.0 && sup_on_heads > 0.0 && rl_on_heads == 0.0 &&
                    rl_on_glimpse > 0.0 && rl_on_shared > 0.0;
  return {pass, buf};
}

// ---------------------------------------------------------------- criterion 6
Outcome criterion_reward() {
  aod::Rng rng(0x6eed);
  double worst = 0.0;
  bool discrete_ok = true;
  for (int i = 0; i < 500; ++i) {
    const int K = 2 + static_cast<int>(rng.below(4));
    std::vector<double> probs(K + 1);
    double z = 0.0;
    for (double& p : probs) {
      p = rng.uniform(0.01, 1.0);
      z += p;
    }
    for (double& p : probs) p /= z;
    aod::NetworkOutput out;
    out.class_probs = aod::Tensor({K + 1}, std::vector<double>(probs));
    for (int c = 0; c < K; ++c) {
      out.bbox_deltas.push_back({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                                 rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
    }
    const aod::BoundingBox proposal{rng.uniform(20, 40), rng.uniform(20, 40),
                                    rng.uniform(6, 20), rng.uniform(6, 20)};
    const aod::BoundingBox gt{rng.uniform(20, 40), rng.uniform(20, 40), rng.uniform(6, 20),
                              rng.uniform(6, 20)};
    const int c_star = static_cast<int>(rng.below(K));

    // independent recomputation from the raw definitions
    const aod::GlimpseDelta d = out.bbox_deltas[c_star];
    const double bx = proposal.cx + d.dx * proposal.w;
    const double by = proposal.cy + d.dy * proposal.h;
    const double bw = proposal.w * std::exp(d.dw);
    const double bh = proposal.h * std::exp(d.dh);
    const double ix0 = std::max(bx - bw / 2, gt.cx - gt.w / 2);
    const double iy0 = std::max(by - bh / 2, gt.cy - gt.h / 2);
    const double ix1 = std::min(bx + bw / 2, gt.cx + gt.w / 2);
    const double iy1 = std::min(by + bh / 2, gt.cy + gt.h / 2);
    const double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
    const double overlap = inter / (bw * bh + gt.w * gt.h - inter);
    const double expect = probs[c_star] * overlap;

    const double got = aod::compute_reward(out, c_star, gt, proposal);
    worst = std::max(worst, std::abs(got - expect));

    // discrete rule table
    int argmax = 0;
    for (int c = 1; c <= K; ++c) {
      if (probs[c] > probs[argmax]) argmax = c;
    }
    for (double thresh : {0.3, 0.5, 0.7}) {
      const double want = (argmax == c_star && overlap >= thresh) ? 1.0 : 0.0;
      if (aod::compute_discrete_reward(out, c_star, gt, proposal, thresh) != want) {
        discrete_ok = false;
      }
    }
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "max |diff| %.2e, discrete table %s", worst,
                discrete_ok ? "exact" : "WRONG");
  return {worst <= 1e-12 && discrete_ok, buf};
}

// ---------------------------------------------------------------- criterion 7
Outcome criterion_evaluator() {
  const auto t0 = Clock::now();
  aod::Rng rng(0xe7a1);
  int mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const auto inst = testsupport::random_ap_instance(rng);
    const double got = aod::average_precision(inst.dets, inst.gts, 0.5, true);
    const double expect = testsupport::oracle_ap_11pt(inst.dets, inst.gts, 0.5);
    if (got != expect) ++mismatches;
  }

  // the three hand fixtures
  bool fixtures_ok = true;
  {
    aod::GtIndex gts;
    gts["a"].push_back({{10, 10, 4, 4}, false});
    gts["b"].push_back({{20, 20, 6, 6}, false});
    std::vector<aod::Detection> dets(2);
    dets[0] = {"a", 0, 0.9, {10, 10, 4, 4}};
    dets[1] = {"b", 0, 0.8, {20, 20, 6, 6}};
    if (std::abs(aod::average_precision(dets, gts) - 1.0) > 1e-12) fixtures_ok = false;
  }
  {
    aod::GtIndex gts;
    gts["a"].push_back({{10, 10, 4, 4}, false});
    std::vector<aod::Detection> dets(2);
    dets[0] = {"a", 0, 0.9, {40, 40, 4, 4}};
    dets[1] = {"a", 0, 0.8, {10, 10, 4, 4}};
    if (std::abs(aod::average_precision(dets, gts) - 0.5) > 1e-12) fixtures_ok = false;
  }
  {
    aod::GtIndex gts;
    gts["a"].push_back({{10, 10, 4, 4}, false});
    if (aod::average_precision({}, gts) != 0.0) fixtures_ok = false;
  }
  const double secs = seconds_since(t0);
  char buf[120];
  std::snprintf(buf, sizeof(buf), "%d/200 mismatches, fixtures %s, %.1fs", mismatches,
                fixtures_ok ? "exact" : "WRONG", secs);
  return {mismatches == 0 && fixtures_ok && secs < 30.0, buf};
}

// ---------------------------------------------------------------- criterion 8
Outcome criterion_end_to_end() {
  const auto t0 = Clock::now();
  aod::SceneConfig scfg;
  scfg.K = 5;
  scfg.image_size = 48;
  scfg.context_cue = true;
  scfg.seed = 100;
  const aod::Dataset train_ds = aod::generate_dataset(scfg, 2000);
  aod::SceneConfig tcfg = scfg;
  tcfg.seed = 777;
  const aod::Dataset test_ds = aod::generate_dataset(tcfg, 500);

  std::ostringstream detail;
  std::vector<double> medians;
  double train_map = 0.0, test_map = 0.0;
  for (const int steps : {1, 2, 3}) {
    std::vector<double> maps;
    for (const std::uint64_t seed : {1, 2, 3}) {
      aod::TrainConfig cfg;  // defaults throughout
      cfg.net.T = steps;
      cfg.net.K = 5;
      cfg.seed = seed;
      aod::TrainResult res = aod::train(train_ds, cfg);
      const aod::EvalResult ev =
          aod::evaluate_dataset(test_ds, res.params, aod::EvalSettings{});
      maps.push_back(ev.map);
      std::fprintf(stderr, "[criterion 8] T=%d seed %llu mAP %.4f (%.0fs)\n", steps,
                   static_cast<unsigned long long>(seed), ev.map, seconds_since(t0));
      if (steps == 3 && seed == 3) {
        // measured expectation, not a gate: a checkpoint scores at least as
        // well on (a slice of) its own training data as on held-out data
        aod::Dataset train_slice;
        train_slice.scene_config = train_ds.scene_config;
        for (int i = 0; i < 500; ++i) train_slice.images.push_back(train_ds.images[i]);
        train_map =
            aod::evaluate_dataset(train_slice, res.params, aod::EvalSettings{}).map;
        test_map = ev.map;
      }
    }
    medians.push_back(aod::median_of(maps));
    detail << "T=" << steps << " median " << medians.back() << " (";
    for (double m : maps) detail << " " << m;
    detail << " ) ";
  }
  const double secs = seconds_since(t0);
  detail << "; T=3/seed3 train-slice mAP " << train_map << " vs test " << test_map;
  detail << ", " << static_cast<int>(secs) << "s";
  const bool pass = medians[2] >= medians[0] + 0.01 && medians[1] >= medians[0] + 0.01 &&
                    secs < 1800.0;
  return {pass, detail.str()};
}

// ---------------------------------------------------------------- criterion 9
#ifdef AOD_CLI_PATH
int run_cli(const std::string& args) {
  const std::string cmd = std::string(AOD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

int cli_exit_code(const std::string& args) {
  const int status = run_cli(args);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// metrics CSV minus the wall-clock column, which is the one legitimately
// non-reproducible field
std::string strip_wall_ms(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t cut = line.rfind(',');
    out << line.substr(0, cut) << "\n";
  }
  return out.str();
}

Outcome criterion_determinism() {
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "aod_acceptance_det";
  fs::remove_all(base);
  fs::create_directories(base);
  const std::string b = base.string();

  // dataset generation is byte-identical
  if (run_cli("gen-data --out " + b + "/d1.json --images 60 --seed 5 --context-cue") != 0 ||
      run_cli("gen-data --out " + b + "/d2.json --images 60 --seed 5 --context-cue") != 0) {
    return {false, "gen-data failed"};
  }
  if (slurp(b + "/d1.json") != slurp(b + "/d2.json")) {
    return {false, "gen-data outputs differ"};
  }

  // training runs are byte-identical across reruns and thread counts
  const std::string train_flags =
      " --data " + b + "/d1.json --seed 9 --iterations 12 --steps 2 --classes 5";
  if (run_cli("train" + train_flags + " --threads 2 --out " + b + "/runA") != 0 ||
      run_cli("train" + train_flags + " --threads 2 --out " + b + "/runB") != 0 ||
      run_cli("train" + train_flags + " --threads 1 --out " + b + "/runC") != 0) {
    return {false, "train command failed"};
  }
  const std::string ck_a = slurp(b + "/runA/checkpoint.json");
  if (ck_a.empty() || ck_a != slurp(b + "/runB/checkpoint.json")) {
    return {false, "checkpoints differ across reruns"};
  }
  if (ck_a != slurp(b + "/runC/checkpoint.json")) {
    return {false, "checkpoints differ across thread counts"};
  }
  const std::string m_a = strip_wall_ms(slurp(b + "/runA/metrics.csv"));
  if (m_a.empty() || m_a != strip_wall_ms(slurp(b + "/runB/metrics.csv")) ||
      m_a != strip_wall_ms(slurp(b + "/runC/metrics.csv"))) {
    return {false, "metrics differ (wall_ms excluded)"};
  }

  // evaluation is byte-identical
  if (run_cli("eval --data " + b + "/d1.json --checkpoint " + b + "/runA/checkpoint.json" +
              " --out " + b + "/r1") != 0 ||
      run_cli("eval --data " + b + "/d1.json --checkpoint " + b + "/runA/checkpoint.json" +
              " --out " + b + "/r2") != 0) {
    return {false, "eval command failed"};
  }
  if (slurp(b + "/r1.json") != slurp(b + "/r2.json")) {
    return {false, "eval outputs differ"};
  }

  // a re-fed --print-config document reproduces the run exactly
  {
    const std::string cmd = std::string(AOD_CLI_PATH) + " train" + train_flags +
                            " --threads 2 --print-config > " + b + "/resolved.json 2>/dev/null";
    if (std::system(cmd.c_str()) != 0) return {false, "print-config failed"};
    if (run_cli("train --data " + b + "/d1.json --config " + b + "/resolved.json --out " + b +
                "/runD") != 0) {
      return {false, "train from re-fed config failed"};
    }
    if (ck_a != slurp(b + "/runD/checkpoint.json")) {
      return {false, "re-fed print-config run differs"};
    }
  }

  // documented exit codes: a missing checkpoint is a clean validation error
  if (cli_exit_code("eval --data " + b + "/d1.json --checkpoint " + b + "/absent.json") != 2) {
    return {false, "missing checkpoint did not exit with code 2"};
  }
  fs::remove_all(base);
  return {true,
          "gen-data, train (reruns + threads 1 vs 2 + re-fed print-config), eval all "
          "byte-identical"};
}
#else
Outcome criterion_determinism() { return {false, "CLI path not configured"}; }
#endif

// --------------------------------------------------------------- criterion 10
Outcome criterion_codec_and_parser() {
  aod::Rng rng(0xc0dec);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const aod::BoundingBox box = testsupport::random_box(rng);
    const aod::BoundingBox anchor = testsupport::random_box(rng);
    const aod::BoundingBox back =
        aod::decode_glimpse(aod::encode_glimpse(box, anchor), anchor);
    worst = std::max({worst, std::abs(back.cx - box.cx), std::abs(back.cy - box.cy),
                      std::abs(back.w - box.w), std::abs(back.h - box.h)});
  }

  bool voc_ok = true;
  std::string voc_msg = "voc fixtures exact";
  try {
    const aod::VocAnnotation ann = aod::parse_voc_xml(
        "<annotation><size><width>353</width><height>500</height></size>"
        "<object><name>dog</name><difficult>0</difficult>"
        "<bndbox><xmin>1</xmin><ymin>1</ymin><xmax>10</xmax><ymax>20</ymax></bndbox>"
        "</object></annotation>");
    if (ann.objects.size() != 1 || ann.objects[0].box.cx != 5.5 ||
        ann.objects[0].box.cy != 10.5 || ann.objects[0].box.w != 10.0 ||
        ann.objects[0].box.h != 20.0) {
      voc_ok = false;
      voc_msg = "voc center-form values wrong";
    }
  } catch (const std::exception& e) {
    voc_ok = false;
    voc_msg = std::string("voc fixture failed: ") + e.what();
  }

  // the three documented error cases raise named errors
  auto expect_error = [&](const std::string& doc, const char* needle) {
    try {
      aod::parse_voc_xml(doc);
      return false;
    } catch (const aod::ParseError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
  };
  const bool err_ok =
      expect_error("<annotation><size><width>10</width><height>10</height></size>"
                   "<object><name>cat</name></object></annotation>",
                   "object/bndbox") &&
      expect_error("<annotation><size><width>10</width><height>10</height></size>"
                   "<object><name>cat</name><bndbox><xmin>1.5</xmin><ymin>1</ymin>"
                   "<xmax>5</xmax><ymax>5</ymax></bndbox></object></annotation>",
                   "object/bndbox/xmin") &&
      expect_error("<annotation></annotation>", "annotation/size");

  char buf[160];
  std::snprintf(buf, sizeof(buf), "round-trip max err %.2e, %s, errors %s", worst,
                voc_msg.c_str(), err_ok ? "named" : "WRONG");
  return {worst < 1e-9 && voc_ok && err_ok, buf};
}

struct Criterion {
  int number;
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "gradient correctness (ops + full network vs finite differences)", criterion_gradients},
    {2, "roi pooling matches the brute-force oracle on 1000 instances", criterion_roi_oracle},
    {3, "return normalization standardizes 1000 random episode sets", criterion_return_normalization},
    {4, "policy-gradient estimator matches the bandit oracle and ascends", criterion_bandit},
    {5, "gradient masking between supervised and reinforce sources", criterion_masking},
    {6, "reward formula P(c*) x IoU and the discrete rule table", criterion_reward},
    {7, "11-point AP matches the brute-force PR oracle and fixtures", criterion_evaluator},
    {8, "end-to-end: median mAP(T=2), mAP(T=3) beat mAP(T=1) by >= 1 point", criterion_end_to_end},
    {9, "bit-exact determinism of commands across reruns and parallelism", criterion_determinism},
    {10, "glimpse codec round-trip and VOC XML conformance", criterion_codec_and_parser},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);
  }
  int failures = 0;
  for (const Criterion& c : kCriteria) {
    if (only != 0 && c.number != only) continue;
    const Outcome o = c.run();
    std::printf("%s  [%2d] %s%s%s\n", o.pass ? "PASS" : "FAIL", c.number, c.name,
                o.detail.empty() ? "" : " -- ", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
