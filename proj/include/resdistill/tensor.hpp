#pragma once

#include <algorithm>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace resdistill {

// Reverse-mode autodiff over dynamically built graphs.
//
// A Tensor owns its values and (lazily) a gradient buffer of the same shape.
// Every op that produces a tensor from differentiable inputs records the
// inputs as parents plus a closure that routes the output gradient back into
// them. backward() topologically sorts the graph reachable from a scalar loss
// and runs the closures in reverse order. Gradients accumulate additively into
// leaf tensors until explicitly cleared, which is what makes gradient
// accumulation across single-sample backward passes work.
template <typename T>
class Tensor : public std::enable_shared_from_this<Tensor<T>> {
public:
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;

    std::vector<std::shared_ptr<Tensor<T>>> parents;
    std::function<void()> backward_fn;

    std::size_t numel() const { return data.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void clear_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    // Drops graph edges so this tensor acts as a constant from here on.
    void detach() {
        parents.clear();
        backward_fn = nullptr;
        requires_grad = false;
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape dims must be positive");
        n *= std::size_t(d);
    }
    return n;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    t->data.assign(shape_numel(shape), T(0));
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
        throw std::invalid_argument("tensor data size does not match shape");
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

template <typename T>
TensorPtr<T> scalar_tensor(T value, bool requires_grad = false) {
    return make_tensor<T>({1}, {value}, requires_grad);
}

template <typename T>
bool same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    return a->shape == b->shape;
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Runs reverse-mode accumulation from `loss`, which must be a scalar. `seed`
// is the gradient injected at the loss node; passing 1/k implements averaging
// over k accumulated single-sample losses.
template <typename T>
void backward(const TensorPtr<T>& loss, T seed = T(1)) {
    if (loss->numel() != 1)
        throw std::invalid_argument("backward expects a scalar loss, got shape " + shape_str(loss->shape));

    // Iterative DFS topological sort (graphs can be deep for many-layer nets).
    std::vector<Tensor<T>*> order;
    std::unordered_set<Tensor<T>*> visited;
    std::vector<std::pair<Tensor<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Tensor<T>* p = node->parents[next_child].get();
            ++next_child;
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

} // namespace resdistill
