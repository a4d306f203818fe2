#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "promptkd/tensor.hpp"

namespace promptkd {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// First/second moment estimates for one parameter array.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

// One AdamW update (decoupled weight decay, bias-corrected moments) applied
// in place. Throws ConfigError for lr <= 0 and DimensionError when the
// state does not match the parameter size.
void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                const AdamWConfig& cfg);

// AdamW over a fixed list of parameter tensors. Parameters that received
// no gradient since the last zero_grad() are skipped.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  void step();
  void zero_grad();

  const AdamWConfig& config() const { return cfg_; }
  std::vector<AdamState>& states() { return states_; }
  const std::vector<AdamState>& states() const { return states_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamWConfig cfg_;
};

}  // namespace promptkd
