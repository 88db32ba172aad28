#include "cxr/tensor/adam.hpp"

#include <cmath>

#include "cxr/common/error.hpp"

namespace cxr {

void adam_step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads,
               AdamState& state, const AdamOptions& options) {
  require(params.size() == grads.size(), ErrorKind::kInvalidArgument,
          "adam_step: params and grads differ in count");
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.push_back(Tensor::zeros_like(*p));
      state.second_moment.push_back(Tensor::zeros_like(*p));
    }
  }
  require(state.first_moment.size() == params.size() && state.second_moment.size() == params.size(),
          ErrorKind::kShapeMismatch, "adam_step: state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(state.first_moment[i].shape() == params[i]->shape() &&
                state.second_moment[i].shape() == params[i]->shape(),
            ErrorKind::kShapeMismatch, "adam_step: state buffer shape mismatch");
    if (grads[i] != nullptr && !grads[i]->is_null()) {
      require(grads[i]->shape() == params[i]->shape(), ErrorKind::kShapeMismatch,
              "adam_step: gradient shape mismatch");
      require(grads[i]->all_finite(), ErrorKind::kNonFinite, "adam_step: non-finite gradient");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->ptr();
    double* m = state.first_moment[i].ptr();
    double* v = state.second_moment[i].ptr();
    const bool has_grad = grads[i] != nullptr && !grads[i]->is_null();
    const double* g = has_grad ? grads[i]->ptr() : nullptr;
    for (std::size_t j = 0; j < params[i]->size(); ++j) {
      const double gj = has_grad ? g[j] : 0.0;
      m[j] = options.beta1 * m[j] + (1.0 - options.beta1) * gj;
      v[j] = options.beta2 * v[j] + (1.0 - options.beta2) * gj * gj;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

Adam::Adam(std::vector<Variable> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {}

void Adam::step() {
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  values.reserve(params_.size());
  grads.reserve(params_.size());
  for (auto& p : params_) {
    values.push_back(&p.mutable_value());
    grads.push_back(p.has_grad() ? &p.grad() : nullptr);
  }
  adam_step(values, grads, state_, options_);
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::set_state(AdamState state) {
  require(state.first_moment.size() == params_.size() || state.first_moment.empty(),
          ErrorKind::kMismatch, "Adam::set_state: parameter count mismatch");
  state_ = std::move(state);
}

}  // namespace cxr
