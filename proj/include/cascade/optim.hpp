#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cascade/tensor.hpp"

namespace cascade {

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  int64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update on one parameter tensor. Rejects non-finite
// gradients with NumericalError; increments state.step_count.
void adam_step(Tensor& params, const std::vector<double>& grads, AdamState& state);

// Ordered name -> parameter registry. Iteration order is registration
// order so optimizer sweeps and checkpoints are deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  int64_t total_params() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, size_t> index_;
};

// One AdamState per parameter in store order.
class Adam {
 public:
  Adam(ParamStore& store, double learning_rate);
  void step();
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr);

 private:
  ParamStore& store_;
  double lr_;
  std::vector<AdamState> states_;
};

}  // namespace cascade
