#pragma once

#include "csdn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace csdn {

template <typename Scalar>
struct Node;

/// Handle to a value recorded in the define-by-run graph. Copies share the
/// same node.
template <typename Scalar>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

    /// Graph leaf. Named leaves show up in the map returned by backward().
    static Var leaf(Tensor<Scalar> value, bool requires_grad, std::string name = {});
    static Var constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

    [[nodiscard]] const Tensor<Scalar>& value() const;
    [[nodiscard]] const Shape& shape() const { return value().shape(); }
    [[nodiscard]] bool requires_grad() const;
    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    /// Accumulated gradient; empty tensor when none reached this node.
    [[nodiscard]] const Tensor<Scalar>& grad() const;

    [[nodiscard]] Node<Scalar>* node() const { return node_.get(); }
    [[nodiscard]] const std::shared_ptr<Node<Scalar>>& shared() const { return node_; }

private:
    std::shared_ptr<Node<Scalar>> node_;
};

template <typename Scalar>
struct Node {
    using BackwardFn = std::function<void(Node&)>;

    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    bool consumed = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::string name;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;

    [[nodiscard]] bool is_leaf() const { return inputs.empty() && !backward; }
    /// Gradient buffer, zero-initialised on first touch.
    Tensor<Scalar>& grad_buffer();
    /// Gradient buffer of input i, or nullptr when that input needs none.
    Tensor<Scalar>* input_grad(std::size_t i);
};

/// Records a new op node. `backward` is kept only when grad mode is on and
/// some input requires a gradient. Throws NumericError on non-finite output.
template <typename Scalar>
Var<Scalar> record(const char* op, Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                   typename Node<Scalar>::BackwardFn backward);
template <typename Scalar>
Var<Scalar> record(const char* op, Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs,
                   typename Node<Scalar>::BackwardFn backward);

/// Reverse sweep from a (1,1,1,1) loss. Each reachable node is visited once
/// in reverse recording order; the graph is released afterwards and a
/// second call on it throws GraphError. Returns gradients of named leaves.
template <typename Scalar>
std::map<std::string, Tensor<Scalar>> backward(const Var<Scalar>& loss);

/// Thread-local switch for graph recording.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Checks finiteness of every freshly computed value. On by default; the
/// finite-difference harness and benchmarks keep it on as well.
void set_finite_checks(bool enabled);
bool finite_checks();

extern template class Var<float>;
extern template class Var<double>;

} // namespace csdn
