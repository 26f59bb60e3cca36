#pragma once

#include "csdn/autodiff.hpp"
#include "csdn/layers.hpp"
#include "csdn/parameters.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace csdn {

struct NetworkConfig {
    int in_frames = 3;
    int num_classes = 3;
    int downsample_r = 2;
    std::array<int, 3> shallow_channels{32, 48, 96};
    int stem_channels = 16;
    std::array<int, 3> ge_stage_channels{16, 32, 64};
    int ge_expansion = 6;
    std::array<int, 3> ge_layers{2, 3, 4};
    int fusion_channels = 96;
    int head_channels = 96;
    int aux_channels = 32;
    float aux_weight = 0.4f;
    float bn_momentum = 0.1f;
    float bn_eps = 1e-5f;

    static NetworkConfig reference() { return {}; }
    /// Small widths for finite-difference checking (well under 100K params).
    static NetworkConfig tiny();

    void validate() const;
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class Mode { train, eval };

struct ForwardOptions {
    Mode mode = Mode::eval;
    /// Train-mode graph (aux heads included) with BN on running statistics
    /// and no statistic updates. Used by the gradient checker.
    bool frozen_norm = false;
};

template <typename Scalar>
struct CsdnOutput {
    Var<Scalar> main_logits;
    std::vector<Var<Scalar>> aux_logits;
};

template <typename Scalar>
struct DeepOutput {
    Var<Scalar> semantic;
    std::vector<Var<Scalar>> taps;
};

/// Binds parameter names to graph leaves for one forward pass. In declare
/// mode missing parameters are created with their default values.
template <typename Scalar>
class ForwardContext {
public:
    ForwardContext(ParameterStore<Scalar>& store, NormMode norm, bool update_running, bool declare = false,
                   double bn_momentum = 0.1, double bn_eps = 1e-5);

    Var<Scalar> param(const std::string& name, Shape shape, ParamKind kind);

    Var<Scalar> conv(const std::string& prefix, const Var<Scalar>& x, const ConvSpec& spec);
    Var<Scalar> bn(const std::string& prefix, const Var<Scalar>& x);
    Var<Scalar> prelu(const std::string& prefix, const Var<Scalar>& x);
    /// conv -> BN
    Var<Scalar> conv_bn(const std::string& prefix, const Var<Scalar>& x, const ConvSpec& spec);
    /// conv -> BN -> PReLU
    Var<Scalar> conv_bn_act(const std::string& prefix, const Var<Scalar>& x, const ConvSpec& spec);

    [[nodiscard]] const std::map<std::string, Var<Scalar>>& leaves() const { return leaves_; }

private:
    ParameterStore<Scalar>& store_;
    NormMode norm_;
    bool update_running_;
    bool declare_;
    double momentum_;
    double eps_;
    std::map<std::string, Var<Scalar>> leaves_;
};

/// Bicubic to half size, then pixel_unshuffle(r).
template <typename Scalar>
Var<Scalar> downsample_module(const Var<Scalar>& x, int r = 2);

template <typename Scalar>
Var<Scalar> shallow_forward(ForwardContext<Scalar>& ctx, const Var<Scalar>& x, const NetworkConfig& cfg);

template <typename Scalar>
Var<Scalar> stem_block(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int channels);

template <typename Scalar>
Var<Scalar> ge_stride1(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int channels,
                       int expansion);

template <typename Scalar>
Var<Scalar> ge_stride2(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int in_channels,
                       int out_channels, int expansion);

template <typename Scalar>
Var<Scalar> context_block(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int channels);

template <typename Scalar>
DeepOutput<Scalar> deep_forward(ForwardContext<Scalar>& ctx, const Var<Scalar>& x, const NetworkConfig& cfg);

/// Bidirectional gated merge. The compressed detail path must land on the
/// semantic map's size; both gated products are resampled to the detail
/// map's size.
template <typename Scalar>
Var<Scalar> mutual_guided_fusion(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& detail,
                                 const Var<Scalar>& semantic, int channels);

template <typename Scalar>
Var<Scalar> seg_head(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int head_channels,
                     int out_classes, std::int64_t out_h, std::int64_t out_w);

/// conv3x3 -> BN -> PReLU -> conv1x1 -> bilinear to (out_h, out_w).
template <typename Scalar>
Var<Scalar> aux_head(ForwardContext<Scalar>& ctx, const std::string& prefix, const Var<Scalar>& x, int channels,
                     int out_classes, std::int64_t out_h, std::int64_t out_w);

template <typename Scalar>
CsdnOutput<Scalar> csdn_forward(ForwardContext<Scalar>& ctx, const Var<Scalar>& x, const NetworkConfig& cfg,
                                bool with_aux);

/// Prefix shared by the training-only deep-supervision heads.
inline const std::string kAuxPrefix = "aux.";

/// He-uniform conv weights from `seed` in name order; biases and betas 0,
/// gammas 1, PReLU slopes 0.25, running mean 0, running variance 1.
template <typename Scalar>
void initialize_parameters(ParameterStore<Scalar>& store, std::uint64_t seed);

template <typename Scalar>
class Network {
public:
    /// Declares every parameter (default values, conv weights zero).
    explicit Network(NetworkConfig cfg);
    Network(NetworkConfig cfg, ParameterStore<Scalar> store) : config_(std::move(cfg)), store_(std::move(store)) {}

    void initialize(std::uint64_t seed) { initialize_parameters(store_, seed); }

    /// Input (n, in_frames, H, W) with H, W multiples of 64. Leaves of
    /// learnable parameters are named after them and require grad while
    /// recording is enabled.
    CsdnOutput<Scalar> forward(const Tensor<Scalar>& x, ForwardOptions opt = {});

    [[nodiscard]] const NetworkConfig& config() const { return config_; }
    ParameterStore<Scalar>& parameters() { return store_; }
    [[nodiscard]] const ParameterStore<Scalar>& parameters() const { return store_; }
    /// Learnable scalars of the deployed network (aux heads excluded).
    [[nodiscard]] std::int64_t parameter_count() const { return store_.learnable_count({kAuxPrefix}); }

    template <typename Other>
    [[nodiscard]] Network<Other> cast() const
    {
        return Network<Other>(config_, store_.template cast<Other>());
    }

private:
    NetworkConfig config_;
    ParameterStore<Scalar> store_;
};

/// Learnable scalars of the deployed network for `cfg`.
std::int64_t count_parameters(const NetworkConfig& cfg);

extern template class ForwardContext<float>;
extern template class ForwardContext<double>;
extern template class Network<float>;
extern template class Network<double>;

} // namespace csdn
