#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "aod/tensor.hpp"

namespace aod {

// Closed op set; the network graph is hand-assembled from these kinds and
// differentiated by replaying the records in reverse.
enum class OpKind {
  affine,
  relu,
  dropout,
  conv2d,
  maxpool2d,
  softmax_xent,
  smooth_l1,
  eltwise_max,
  concat,
};

struct OpAttrs {
  // affine: number of (x, W) pairs and whether a bias vector follows them.
  int terms = 1;
  bool has_bias = true;
  // dropout
  double rate = 0.5;
  bool train = false;
  // conv2d / maxpool2d
  int stride = 1;
  int pad = 0;
  int kernel = 2;
  // softmax_xent
  int target = 0;
};

// What backward needs: borrowed input tensors (the caller keeps activations
// and parameters alive until backward runs), plus op-specific saved data.
struct OpRecord {
  OpKind kind{};
  OpAttrs attrs{};
  std::vector<const Tensor*> inputs;
  std::vector<int> out_shape;
  Tensor saved;                // dropout mask / softmax probabilities
  std::vector<std::int32_t> iaux;  // argmax routing for max ops
};

namespace detail {

inline void check_vector(const Tensor& t, const char* what) {
  if (t.shape.size() != 1) throw ShapeError(std::string(what) + ": expected 1-d tensor");
}

inline void affine_validate(const std::vector<const Tensor*>& in, const OpAttrs& a) {
  if (a.terms < 1) throw ContractError("affine: needs at least one (x, W) pair");
  const std::size_t expect = 2 * a.terms + (a.has_bias ? 1 : 0);
  if (in.size() != expect) throw ShapeError("affine: wrong input count");
  const int out_dim = in[1]->shape[0];
  for (int k = 0; k < a.terms; ++k) {
    const Tensor& x = *in[2 * k];
    const Tensor& w = *in[2 * k + 1];
    check_vector(x, "affine x");
    if (w.shape.size() != 2 || w.shape[0] != out_dim || w.shape[1] != x.shape[0]) {
      throw ShapeError("affine: W shape does not match x / output dims");
    }
  }
  if (a.has_bias) {
    const Tensor& b = *in.back();
    check_vector(b, "affine bias");
    if (b.shape[0] != out_dim) throw ShapeError("affine: bias dim mismatch");
  }
}

}  // namespace detail

inline std::pair<Tensor, OpRecord> forward(OpKind kind,
                                           std::vector<const Tensor*> inputs,
                                           OpAttrs attrs = {}, Rng* rng = nullptr) {
  OpRecord rec;
  rec.kind = kind;
  rec.attrs = attrs;
  Tensor out;

  switch (kind) {
    case OpKind::affine: {
      detail::affine_validate(inputs, attrs);
      const int out_dim = inputs[1]->shape[0];
      out = Tensor({out_dim});
      for (int k = 0; k < attrs.terms; ++k) {
        const Tensor& x = *inputs[2 * k];
        const Tensor& w = *inputs[2 * k + 1];
        const int in_dim = x.shape[0];
        for (int o = 0; o < out_dim; ++o) {
          out[o] += dot(&w.v[static_cast<std::size_t>(o) * in_dim], x.v.data(), in_dim);
        }
      }
      if (attrs.has_bias) {
        const Tensor& b = *inputs.back();
        for (int o = 0; o < out_dim; ++o) out[o] += b[o];
      }
      break;
    }
    case OpKind::relu: {
      if (inputs.size() != 1) throw ShapeError("relu: expects one input");
      out = *inputs[0];
      for (double& x : out.v) x = std::max(x, 0.0);
      break;
    }
    case OpKind::dropout: {
      if (inputs.size() != 1) throw ShapeError("dropout: expects one input");
      const Tensor& x = *inputs[0];
      if (!attrs.train) {
        out = x;
        break;
      }
      if (attrs.rate < 0.0 || attrs.rate >= 1.0) {
        throw ContractError("dropout: rate must be in [0, 1)");
      }
      if (rng == nullptr) throw ContractError("dropout: train mode needs an explicit rng");
      const double keep_scale = 1.0 / (1.0 - attrs.rate);
      rec.saved = Tensor(x.shape);
      out = Tensor(x.shape);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double m = (rng->uniform() >= attrs.rate) ? keep_scale : 0.0;
        rec.saved[i] = m;
        out[i] = x[i] * m;
      }
      break;
    }
    case OpKind::conv2d: {
      if (inputs.size() != 3) throw ShapeError("conv2d: expects (x, w, b)");
      const Tensor& x = *inputs[0];
      const Tensor& w = *inputs[1];
      const Tensor& b = *inputs[2];
      if (x.shape.size() != 3 || w.shape.size() != 4 || b.shape.size() != 1) {
        throw ShapeError("conv2d: bad ranks");
      }
      const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
      const int OC = w.shape[0], kh = w.shape[2], kw = w.shape[3];
      if (w.shape[1] != C || b.shape[0] != OC) throw ShapeError("conv2d: channel mismatch");
      const int OH = (H + 2 * attrs.pad - kh) / attrs.stride + 1;
      const int OW = (W + 2 * attrs.pad - kw) / attrs.stride + 1;
      if (OH < 1 || OW < 1) throw ShapeError("conv2d: output would be empty");
      out = Tensor({OC, OH, OW});
      for (int oc = 0; oc < OC; ++oc) {
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox) {
            double acc = b[oc];
            const int y0 = oy * attrs.stride - attrs.pad;
            const int x0 = ox * attrs.stride - attrs.pad;
            for (int c = 0; c < C; ++c) {
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = y0 + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = x0 + kx;
                  if (ix < 0 || ix >= W) continue;
                  acc += x.at3(c, iy, ix) *
                         w.v[((static_cast<std::size_t>(oc) * C + c) * kh + ky) * kw + kx];
                }
              }
            }
            out.at3(oc, oy, ox) = acc;
          }
        }
      }
      break;
    }
    case OpKind::maxpool2d: {
      if (inputs.size() != 1) throw ShapeError("maxpool2d: expects one input");
      const Tensor& x = *inputs[0];
      if (x.shape.size() != 3) throw ShapeError("maxpool2d: expects (c,h,w)");
      const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
      const int k = attrs.kernel, s = attrs.stride;
      const int OH = (H - k) / s + 1;
      const int OW = (W - k) / s + 1;
      if (OH < 1 || OW < 1) throw ShapeError("maxpool2d: output would be empty");
      out = Tensor({C, OH, OW});
      rec.iaux.resize(out.numel());
      std::size_t oi = 0;
      for (int c = 0; c < C; ++c) {
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox, ++oi) {
            double best = -1e300;
            std::int32_t best_idx = -1;
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s + ky;
                const int ix = ox * s + kx;
                const double val = x.at3(c, iy, ix);
                // strictly-greater keeps the lowest index on ties
                if (val > best) {
                  best = val;
                  best_idx = static_cast<std::int32_t>(
                      (static_cast<std::size_t>(c) * H + iy) * W + ix);
                }
              }
            }
            out[oi] = best;
            rec.iaux[oi] = best_idx;
          }
        }
      }
      break;
    }
    case OpKind::softmax_xent: {
      if (inputs.size() != 1) throw ShapeError("softmax_xent: expects logits");
      const Tensor& logits = *inputs[0];
      detail::check_vector(logits, "softmax_xent logits");
      const int n = logits.shape[0];
      if (attrs.target < 0 || attrs.target >= n) {
        throw ContractError("softmax_xent: target index out of range");
      }
      double mx = logits[0];
      for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
      rec.saved = Tensor({n});
      double z = 0.0;
      for (int i = 0; i < n; ++i) {
        rec.saved[i] = std::exp(logits[i] - mx);
        z += rec.saved[i];
      }
      for (int i = 0; i < n; ++i) rec.saved[i] /= z;
      out = Tensor({1}, {-std::log(rec.saved[attrs.target])});
      break;
    }
    case OpKind::smooth_l1: {
      if (inputs.size() != 1) throw ShapeError("smooth_l1: expects one input");
      const Tensor& x = *inputs[0];
      double loss = 0.0;
      for (double xi : x.v) {
        const double a = std::abs(xi);
        loss += (a < 1.0) ? 0.5 * xi * xi : a - 0.5;
      }
      out = Tensor({1}, {loss});
      break;
    }
    case OpKind::eltwise_max: {
      if (inputs.empty()) throw ShapeError("eltwise_max: needs at least one input");
      for (const Tensor* t : inputs) require_same_shape(*t, *inputs[0], "eltwise_max");
      out = Tensor(inputs[0]->shape);
      rec.iaux.resize(out.numel());
      for (std::size_t i = 0; i < out.numel(); ++i) {
        double best = (*inputs[0])[i];
        std::int32_t arg = 0;
        for (std::size_t k = 1; k < inputs.size(); ++k) {
          const double val = (*inputs[k])[i];
          if (val > best) {
            best = val;
            arg = static_cast<std::int32_t>(k);
          }
        }
        out[i] = best;
        rec.iaux[i] = arg;
      }
      break;
    }
    case OpKind::concat: {
      if (inputs.empty()) throw ShapeError("concat: needs at least one input");
      std::size_t total = 0;
      for (const Tensor* t : inputs) {
        detail::check_vector(*t, "concat");
        total += t->numel();
      }
      out = Tensor({static_cast<int>(total)});
      std::size_t off = 0;
      for (const Tensor* t : inputs) {
        std::copy(t->v.begin(), t->v.end(), out.v.begin() + off);
        off += t->numel();
      }
      break;
    }
    default:
      throw ContractError("forward: unknown op kind");
  }

  rec.inputs = std::move(inputs);
  rec.out_shape = out.shape;
  return {std::move(out), std::move(rec)};
}

// Exact reverse-mode gradients, one tensor per recorded input, in input order.
inline std::vector<Tensor> backward(const OpRecord& rec, const Tensor& upstream) {
  if (upstream.shape != rec.out_shape) throw ShapeError("backward: upstream shape mismatch");
  std::vector<Tensor> grads;
  grads.reserve(rec.inputs.size());

  switch (rec.kind) {
    case OpKind::affine: {
      const int out_dim = rec.out_shape[0];
      for (int k = 0; k < rec.attrs.terms; ++k) {
        const Tensor& x = *rec.inputs[2 * k];
        const Tensor& w = *rec.inputs[2 * k + 1];
        const int in_dim = x.shape[0];
        Tensor dx(x.shape);
        Tensor dw(w.shape);
        for (int o = 0; o < out_dim; ++o) {
          const double u = upstream[o];
          if (u == 0.0) continue;
          const double* wrow = &w.v[static_cast<std::size_t>(o) * in_dim];
          double* dwrow = &dw.v[static_cast<std::size_t>(o) * in_dim];
          for (int i = 0; i < in_dim; ++i) {
            dx[i] += wrow[i] * u;
            dwrow[i] += x[i] * u;
          }
        }
        grads.push_back(std::move(dx));
        grads.push_back(std::move(dw));
      }
      if (rec.attrs.has_bias) grads.push_back(upstream);
      break;
    }
    case OpKind::relu: {
      const Tensor& x = *rec.inputs[0];
      Tensor dx(x.shape);
      for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0.0 ? upstream[i] : 0.0;
      grads.push_back(std::move(dx));
      break;
    }
    case OpKind::dropout: {
      if (!rec.attrs.train) {
        grads.push_back(upstream);
        break;
      }
      Tensor dx(rec.inputs[0]->shape);
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = upstream[i] * rec.saved[i];
      grads.push_back(std::move(dx));
      break;
    }
    case OpKind::conv2d: {
      const Tensor& x = *rec.inputs[0];
      const Tensor& w = *rec.inputs[1];
      const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
      const int OC = w.shape[0], kh = w.shape[2], kw = w.shape[3];
      const int OH = rec.out_shape[1], OW = rec.out_shape[2];
      Tensor dx(x.shape);
      Tensor dw(w.shape);
      Tensor db({OC});
      for (int oc = 0; oc < OC; ++oc) {
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox) {
            const double u = upstream.v[(static_cast<std::size_t>(oc) * OH + oy) * OW + ox];
            if (u == 0.0) continue;
            db[oc] += u;
            const int y0 = oy * rec.attrs.stride - rec.attrs.pad;
            const int x0 = ox * rec.attrs.stride - rec.attrs.pad;
            for (int c = 0; c < C; ++c) {
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = y0 + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = x0 + kx;
                  if (ix < 0 || ix >= W) continue;
                  const std::size_t wi =
                      ((static_cast<std::size_t>(oc) * C + c) * kh + ky) * kw + kx;
                  dx.at3(c, iy, ix) += w.v[wi] * u;
                  dw.v[wi] += x.at3(c, iy, ix) * u;
                }
              }
            }
          }
        }
      }
      grads.push_back(std::move(dx));
      grads.push_back(std::move(dw));
      grads.push_back(std::move(db));
      break;
    }
    case OpKind::maxpool2d: {
      Tensor dx(rec.inputs[0]->shape);
      for (std::size_t i = 0; i < upstream.numel(); ++i) {
        dx[rec.iaux[i]] += upstream[i];
      }
      grads.push_back(std::move(dx));
      break;
    }
    case OpKind::softmax_xent: {
      const Tensor& probs = rec.saved;
      Tensor dl(probs.shape);
      const double u = upstream[0];
      for (std::size_t i = 0; i < probs.numel(); ++i) dl[i] = probs[i] * u;
      dl[rec.attrs.target] -= u;
      grads.push_back(std::move(dl));
      break;
    }
    case OpKind::smooth_l1: {
      const Tensor& x = *rec.inputs[0];
      Tensor dx(x.shape);
      const double u = upstream[0];
      for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = std::clamp(x[i], -1.0, 1.0) * u;
      grads.push_back(std::move(dx));
      break;
    }
    case OpKind::eltwise_max: {
      for (const Tensor* t : rec.inputs) grads.emplace_back(t->shape);
      for (std::size_t i = 0; i < upstream.numel(); ++i) {
        grads[rec.iaux[i]][i] += upstream[i];
      }
      break;
    }
    case OpKind::concat: {
      std::size_t off = 0;
      for (const Tensor* t : rec.inputs) {
        Tensor dx(t->shape);
        std::copy(upstream.v.begin() + off, upstream.v.begin() + off + t->numel(),
                  dx.v.begin());
        off += t->numel();
        grads.push_back(std::move(dx));
      }
      break;
    }
    default:
      throw ContractError("backward: unknown op kind");
  }
  return grads;
}

// Softmax without the loss attached, for inference-time class probabilities.
inline Tensor softmax(const Tensor& logits) {
  detail::check_vector(logits, "softmax");
  Tensor p(logits.shape);
  double mx = logits[0];
  for (double x : logits.v) mx = std::max(mx, x);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& x : p.v) x /= z;
  return p;
}

// Classic momentum SGD over a parameter group, with optional global-norm
// gradient clipping. Gradients are zeroed once applied.
inline void sgd_step(const std::vector<Parameter*>& params, double lr, double momentum,
                     std::optional<double> grad_clip = std::nullopt) {
  if (lr <= 0.0) throw ValidationError("sgd_step: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ValidationError("sgd_step: momentum must be in [0, 1)");
  }
  double sq = 0.0;
  for (const Parameter* p : params) {
    double local = 0.0;
    for (double g : p->grad.v) local += g * g;
    if (!is_finite(local)) {
      throw NumericalError("sgd_step: non-finite gradient in parameter '" + p->name + "'");
    }
    sq += local;
  }
  double scale = 1.0;
  const double norm = std::sqrt(sq);
  if (grad_clip && norm > *grad_clip) scale = *grad_clip / norm;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad[i] * scale;
      p->velocity[i] = momentum * p->velocity[i] - lr * g;
      p->value[i] += p->velocity[i];
      p->grad[i] = 0.0;
    }
  }
}

inline double global_grad_norm(const std::vector<Parameter*>& params) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.v) sq += g * g;
  }
  return std::sqrt(sq);
}

}  // namespace aod
