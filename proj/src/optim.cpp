#include "csdn/optim.hpp"

#include "csdn/errors.hpp"

#include <cmath>

namespace csdn {

void AdamConfig::validate() const
{
    if (!(lr0 > 0))
        throw UsageError("lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
        throw UsageError("adam betas must be in [0, 1)");
    if (!(eps > 0))
        throw UsageError("adam eps must be > 0");
    if (!(weight_decay >= 0))
        throw UsageError("weight_decay must be >= 0");
}

template <typename Scalar>
void adam_step(ParameterStore<Scalar>& params, const std::map<std::string, Tensor<Scalar>>& grads,
               OptimizerState<Scalar>& state, const AdamConfig& cfg, double lr)
{
    for (const auto& [name, g] : grads) {
        if (!params.contains(name))
            throw GraphError("gradient for unknown parameter '" + name + "'");
        const Parameter<Scalar>& p = params.at(name);
        if (!p.learnable())
            throw GraphError("gradient for non-learnable parameter '" + name + "'");
        if (g.shape() != p.value.shape())
            throw ShapeError("gradient of '" + name + "' has shape " + g.shape().str() + ", parameter " +
                             p.value.shape().str());
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (const auto& [name, g] : grads) {
        Parameter<Scalar>& p = params.at(name);
        auto& m = state.m.try_emplace(name, Tensor<Scalar>(p.value.shape())).first->second;
        auto& v = state.v.try_emplace(name, Tensor<Scalar>(p.value.shape())).first->second;
        const double wd = p.decay() ? cfg.weight_decay : 0.0;
        for (std::int64_t i = 0; i < p.value.numel(); ++i) {
            double gi = static_cast<double>(g[i]);
            if (!cfg.decoupled)
                gi += wd * static_cast<double>(p.value[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<Scalar>(mi);
            v[i] = static_cast<Scalar>(vi);
            double w = static_cast<double>(p.value[i]);
            if (cfg.decoupled)
                w -= lr * wd * w;
            w -= lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
            p.value[i] = static_cast<Scalar>(w);
        }
    }
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adam_step(ParameterStore<float>&, const std::map<std::string, Tensor<float>>&, OptimizerState<float>&,
                        const AdamConfig&, double);
template void adam_step(ParameterStore<double>&, const std::map<std::string, Tensor<double>>&,
                        OptimizerState<double>&, const AdamConfig&, double);

} // namespace csdn
