#pragma once

#include <unordered_map>
#include <vector>

#include "aod/tensor.hpp"

namespace aod {

// Per-worker gradient accumulator. Samples write into private sinks which the
// trainer folds into Parameter::grad in a fixed order, so results do not
// depend on thread scheduling.
class GradSink {
 public:
  GradSink() = default;

  explicit GradSink(const std::vector<Parameter*>& params) { reset(params); }

  void reset(const std::vector<Parameter*>& params) {
    params_ = params;
    slots_.clear();
    index_.clear();
    slots_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      slots_.emplace_back(params[i]->value.shape);
      index_[params[i]] = i;
    }
  }

  void clear() {
    for (Tensor& t : slots_) t.fill(0.0);
  }

  Tensor& of(const Parameter& p) {
    auto it = index_.find(&p);
    if (it == index_.end()) throw ContractError("GradSink: unknown parameter " + p.name);
    return slots_[it->second];
  }

  void accumulate(const Parameter& p, const Tensor& g) {
    Tensor& slot = of(p);
    require_same_shape(slot, g, "GradSink::accumulate");
    for (std::size_t i = 0; i < g.numel(); ++i) slot[i] += g[i];
  }

  // params.grad += scale * slot, in registration order.
  void add_to_params(double scale = 1.0) const {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& grad = params_[k]->grad;
      const Tensor& slot = slots_[k];
      for (std::size_t i = 0; i < slot.numel(); ++i) grad[i] += scale * slot[i];
    }
  }

  const std::vector<Parameter*>& params() const { return params_; }
  const Tensor& slot(std::size_t i) const { return slots_[i]; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> slots_;
  std::unordered_map<const Parameter*, std::size_t> index_;
};

}  // namespace aod
