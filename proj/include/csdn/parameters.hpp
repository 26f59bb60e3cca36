#pragma once

#include "csdn/errors.hpp"
#include "csdn/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace csdn {

enum class ParamKind : std::uint8_t { conv_weight, bias, bn_gamma, bn_beta, prelu_alpha, running_mean, running_var };

[[nodiscard]] constexpr bool is_learnable(ParamKind k)
{
    return k != ParamKind::running_mean && k != ParamKind::running_var;
}

/// Only convolution weights take L2 decay.
[[nodiscard]] constexpr bool takes_decay(ParamKind k) { return k == ParamKind::conv_weight; }

template <typename Scalar>
struct Parameter {
    Tensor<Scalar> value;
    ParamKind kind = ParamKind::conv_weight;

    [[nodiscard]] bool learnable() const { return is_learnable(kind); }
    [[nodiscard]] bool decay() const { return takes_decay(kind); }
};

/// Named tensors of a network, iterated in lexicographic name order.
template <typename Scalar>
class ParameterStore {
public:
    using Map = std::map<std::string, Parameter<Scalar>>;

    /// Returns the existing entry or inserts a zero tensor. A shape clash
    /// with an existing entry throws ShapeError naming the parameter.
    Parameter<Scalar>& declare(const std::string& name, Shape shape, ParamKind kind)
    {
        auto [it, inserted] = entries_.try_emplace(name);
        if (inserted) {
            it->second.value = Tensor<Scalar>(shape);
            it->second.kind = kind;
        } else if (it->second.value.shape() != shape) {
            throw ShapeError("parameter " + name + ": expected " + shape.str() + ", have " +
                             it->second.value.shape().str());
        }
        return it->second;
    }

    [[nodiscard]] bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Parameter<Scalar>& at(const std::string& name)
    {
        auto it = entries_.find(name);
        if (it == entries_.end())
            throw ShapeError("unknown parameter " + name);
        return it->second;
    }
    [[nodiscard]] const Parameter<Scalar>& at(const std::string& name) const
    {
        return const_cast<ParameterStore*>(this)->at(name);
    }

    Map& entries() { return entries_; }
    [[nodiscard]] const Map& entries() const { return entries_; }
    [[nodiscard]] std::size_t size() const { return entries_.size(); }

    [[nodiscard]] std::vector<std::string> names() const
    {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [name, p] : entries_)
            out.push_back(name);
        return out;
    }

    /// Learnable scalars whose name does not start with any of `excluded`.
    [[nodiscard]] std::int64_t learnable_count(const std::vector<std::string>& excluded = {}) const
    {
        std::int64_t total = 0;
        for (const auto& [name, p] : entries_) {
            bool skip = !p.learnable();
            for (const auto& prefix : excluded)
                skip = skip || name.starts_with(prefix);
            if (!skip)
                total += p.value.numel();
        }
        return total;
    }

    template <typename Other>
    [[nodiscard]] ParameterStore<Other> cast() const
    {
        ParameterStore<Other> out;
        for (const auto& [name, p] : entries_)
            out.entries().emplace(name, Parameter<Other>{p.value.template cast<Other>(), p.kind});
        return out;
    }

private:
    Map entries_;
};

} // namespace csdn
