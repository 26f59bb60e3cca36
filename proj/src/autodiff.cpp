#include "csdn/autodiff.hpp"

#include "csdn/errors.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace csdn {
namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_enabled = true;
std::atomic<bool> g_finite_checks{true};

} // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks() { return g_finite_checks.load(); }

template <typename Scalar>
Tensor<Scalar>& Node<Scalar>::grad_buffer()
{
    if (grad.shape() != value.shape() || grad.empty())
        grad = Tensor<Scalar>(value.shape());
    return grad;
}

template <typename Scalar>
Tensor<Scalar>* Node<Scalar>::input_grad(std::size_t i)
{
    auto& in = inputs[i];
    if (!in || !in->requires_grad)
        return nullptr;
    return &in->grad_buffer();
}

template <typename Scalar>
Var<Scalar> Var<Scalar>::leaf(Tensor<Scalar> value, bool requires_grad, std::string name)
{
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->name = std::move(name);
    node->seq = g_sequence.fetch_add(1);
    return Var(std::move(node));
}

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const
{
    if (!node_)
        throw GraphError("access to an undefined Var");
    return node_->value;
}

template <typename Scalar>
bool Var<Scalar>::requires_grad() const
{
    return node_ && node_->requires_grad;
}

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::grad() const
{
    if (!node_)
        throw GraphError("access to an undefined Var");
    return node_->grad;
}

template <typename Scalar, typename Range>
Var<Scalar> record_impl(const char* op, Tensor<Scalar> value, const Range& inputs,
                        typename Node<Scalar>::BackwardFn backward)
{
    if (finite_checks() && !value.all_finite())
        throw NumericError(std::string("non-finite value produced by ") + op);
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    node->op = op;
    node->seq = g_sequence.fetch_add(1);
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var<Scalar>& v) { return v.requires_grad(); });
    if (t_grad_enabled && any) {
        node->requires_grad = true;
        for (const auto& v : inputs) {
            if (!v.defined())
                throw GraphError(std::string("undefined input to ") + op);
            if (v.node()->consumed)
                throw GraphError(std::string("input to ") + op + " belongs to a consumed graph");
            node->inputs.push_back(v.shared());
        }
        node->backward = std::move(backward);
    }
    return Var<Scalar>(std::move(node));
}

template <typename Scalar>
Var<Scalar> record(const char* op, Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                   typename Node<Scalar>::BackwardFn backward)
{
    return record_impl<Scalar>(op, std::move(value), inputs, std::move(backward));
}

template <typename Scalar>
Var<Scalar> record(const char* op, Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs,
                   typename Node<Scalar>::BackwardFn backward)
{
    return record_impl<Scalar>(op, std::move(value), inputs, std::move(backward));
}

template <typename Scalar>
std::map<std::string, Tensor<Scalar>> backward(const Var<Scalar>& loss)
{
    if (!loss.defined())
        throw GraphError("backward on an undefined Var");
    if (loss.shape() != Shape{1, 1, 1, 1})
        throw GraphError("backward needs a scalar (1,1,1,1) loss, got " + loss.shape().str());
    Node<Scalar>* root = loss.node();
    if (root->consumed)
        throw GraphError("backward called twice on the same graph");
    if (!root->requires_grad || root->is_leaf())
        throw GraphError("loss does not depend on any tensor requiring a gradient");

    // Owning pointers: releasing a node's inputs below must not free nodes
    // that are still queued.
    std::vector<std::shared_ptr<Node<Scalar>>> order;
    std::unordered_set<Node<Scalar>*> seen;
    std::vector<std::shared_ptr<Node<Scalar>>> stack{loss.shared()};
    seen.insert(root);
    while (!stack.empty()) {
        auto n = std::move(stack.back());
        stack.pop_back();
        for (const auto& in : n->inputs) {
            if (!in->requires_grad || seen.contains(in.get()))
                continue;
            if (in->consumed)
                throw GraphError("graph already consumed by a previous backward");
            seen.insert(in.get());
            stack.push_back(in);
        }
        order.push_back(std::move(n));
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

    root->grad_buffer().fill(Scalar(1));
    std::map<std::string, Tensor<Scalar>> named;
    for (const auto& n : order) {
        if (n->backward && !n->grad.empty())
            n->backward(*n);
        if (n->is_leaf()) {
            if (!n->name.empty())
                named[n->name] = n->grad.empty() ? Tensor<Scalar>(n->value.shape()) : n->grad;
            continue;
        }
        n->backward = nullptr;
        n->inputs.clear();
        n->consumed = true;
    }
    return named;
}

template class Var<float>;
template class Var<double>;
template struct Node<float>;
template struct Node<double>;

#define CSDN_INSTANTIATE(S)                                                                                         \
    template Var<S> record(const char*, Tensor<S>, std::initializer_list<Var<S>>, Node<S>::BackwardFn);            \
    template Var<S> record(const char*, Tensor<S>, const std::vector<Var<S>>&, Node<S>::BackwardFn);               \
    template std::map<std::string, Tensor<S>> backward(const Var<S>&);
CSDN_INSTANTIATE(float)
CSDN_INSTANTIATE(double)
#undef CSDN_INSTANTIATE

} // namespace csdn
