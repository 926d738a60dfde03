#pragma once

#include <string>
#include <utility>
#include <vector>

#include "histogen/core/tensor.hpp"

namespace histogen::nn {

template <class S>
struct Parameter {
    Tensor<S> value;
    Tensor<S> grad;

    void init(const std::vector<Index>& dims) {
        value.resize(dims);
        grad.resize(dims);
    }
    void zero_grad() { grad.zero(); }
};

// Named parameter list; checkpoint serialization and the optimizer both walk
// this in collection order, which is fixed by construction order.
template <class S>
using NamedParams = std::vector<std::pair<std::string, Parameter<S>*>>;

template <class S>
void zero_grads(const NamedParams<S>& params) {
    for (auto& [name, p] : params) p->zero_grad();
}

template <class S>
Index param_count(const NamedParams<S>& params) {
    Index n = 0;
    for (auto& [name, p] : params) n += p->value.size();
    return n;
}

template <class S>
bool grads_finite(const NamedParams<S>& params) {
    for (auto& [name, p] : params) {
        if (!p->grad.all_finite()) return false;
    }
    return true;
}

}  // namespace histogen::nn
