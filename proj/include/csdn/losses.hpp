#pragma once

#include "csdn/autodiff.hpp"
#include "csdn/labels.hpp"
#include "csdn/network.hpp"

#include <vector>

namespace csdn {

struct LossConfig {
    double focal_gamma = 2.0;
    /// Per-class focal weights; empty means 1 for every class.
    std::vector<double> focal_alpha;
    double dice_eps = 1e-5;
    double aux_weight = 0.4;

    void validate(int num_classes) const;
};

/// Mean over pixels of -alpha_y (1 - p_y)^gamma log p_y, p = softmax over
/// channels. Throws DataError on labels outside [0, K).
template <typename Scalar>
Var<Scalar> focal_loss(const Var<Scalar>& logits, const LabelMap& labels, const LossConfig& cfg);

/// 1 - mean_k D_k with D_k = (2 sum p_k g_k + eps) / (sum p_k + sum g_k + eps),
/// sums taken over the whole batch, mean over classes present in `labels`.
template <typename Scalar>
Var<Scalar> dice_loss(const Var<Scalar>& logits, const LabelMap& labels, const LossConfig& cfg);

/// [focal + dice](main) + aux_weight * sum over aux heads of [focal + dice].
template <typename Scalar>
Var<Scalar> hybrid_loss(const CsdnOutput<Scalar>& out, const LabelMap& labels, const LossConfig& cfg);

} // namespace csdn
