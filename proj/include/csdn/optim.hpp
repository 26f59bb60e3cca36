#pragma once

#include "csdn/parameters.hpp"
#include "csdn/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace csdn {

struct AdamConfig {
    double lr0 = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    /// Decay applied to the weights directly instead of through the gradient.
    bool decoupled = false;

    void validate() const;
};

/// First and second moments per learnable parameter.
template <typename Scalar>
struct OptimizerState {
    std::map<std::string, Tensor<Scalar>> m;
    std::map<std::string, Tensor<Scalar>> v;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update of every parameter named in `grads`;
/// parameters without a gradient are left alone. Weight decay reaches conv
/// weights only. Throws ShapeError on a gradient of the wrong shape and
/// GraphError on a gradient for an unknown or non-learnable parameter.
template <typename Scalar>
void adam_step(ParameterStore<Scalar>& params, const std::map<std::string, Tensor<Scalar>>& grads,
               OptimizerState<Scalar>& state, const AdamConfig& cfg, double lr);

extern template struct OptimizerState<float>;
extern template struct OptimizerState<double>;

} // namespace csdn
