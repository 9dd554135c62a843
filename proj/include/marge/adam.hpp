#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "marge/tensor.hpp"

namespace marge {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers keyed by parameter name.
struct AdamState {
  long long t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

// One bias-corrected update from the grads currently held by the params.
// Grads are left untouched; the caller zeroes them.
void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr, const AdamConfig& cfg = {});

}  // namespace marge
