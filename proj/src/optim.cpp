#include "cascade/optim.hpp"

#include <cmath>

#include "cascade/error.hpp"

namespace cascade {

void adam_step(Tensor& params, const std::vector<double>& grads, AdamState& state) {
  const size_t n = params.data().size();
  if (grads.size() != n) {
    throw DimensionError("adam_step: gradient length " + std::to_string(grads.size()) +
                         " vs parameter length " + std::to_string(n));
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient, update rejected");
  }
  if (state.first_moment.size() != n) state.first_moment.assign(n, 0.0);
  if (state.second_moment.size() != n) state.second_moment.assign(n, 0.0);

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  auto& p = params.mutable_data();
  for (size_t i = 0; i < n; ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter: " + name);
  return items_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("unknown parameter: " + name);
  return items_[it->second].second;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

Adam::Adam(ParamStore& store, double learning_rate) : store_(store), lr_(learning_rate) {
  states_.resize(store.items().size());
  for (auto& s : states_) s.learning_rate = lr_;
}

void Adam::set_learning_rate(double lr) {
  lr_ = lr;
  for (auto& s : states_) s.learning_rate = lr;
}

void Adam::step() {
  // Tensor handles share storage, so updating a copy updates the store.
  for (size_t i = 0; i < store_.items().size(); ++i) {
    Tensor t = store_.items()[i].second;
    adam_step(t, t.grad(), states_[i]);
  }
}

}  // namespace cascade
