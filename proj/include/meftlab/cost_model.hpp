#pragma once

#include <cstddef>

#include "meftlab/config.hpp"

namespace meftlab {

/// Closed-form counts for one method. Retained bytes follow the
/// retention table (see engine.hpp) and are per training sample; the
/// footprint multiplies them by the batch size.
struct CostReport {
  std::size_t total_params{0};
  std::size_t trainable_params{0};
  double trainable_ratio_pct{0.0};
  std::size_t param_bytes{0};
  std::size_t grad_bytes{0};       // trainable params only
  std::size_t optimizer_bytes{0};  // 2 x trainable params
  std::size_t retained_activation_bytes{0};
  double backward_flops{0.0};
  std::size_t total_footprint{0};
};

CostReport cost_model(const ModelConfig& cfg, const MethodSpec& method, std::size_t batch,
                      std::size_t element_bytes);

}  // namespace meftlab
