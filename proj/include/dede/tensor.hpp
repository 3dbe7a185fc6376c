#pragma once

#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dede/errors.hpp"
#include "dede/rng.hpp"

namespace dede {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

inline void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ContractError("tensor: empty shape");
    for (int e : shape)
        if (e <= 0) throw ContractError("tensor: nonpositive extent in " + shape_str(shape));
}

// Dense n-dimensional array. Gradient is allocated lazily by the reverse pass
// and accumulates additively; zero_grad() clears it between iterations.
template <class S>
struct Tensor {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;
    bool requires_grad = false;

    int64_t size() const { return static_cast<int64_t>(data.size()); }

    S item() const {
        if (data.size() != 1) throw ContractError("tensor: item() on non-scalar " + shape_str(shape));
        return data[0];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }

    void zero_grad() {
        if (!grad.empty()) grad.assign(data.size(), S(0));
    }
};

template <class S>
using TensorPtr = std::shared_ptr<Tensor<S>>;

template <class S>
TensorPtr<S> tensor(Shape shape, std::vector<S> data, bool requires_grad = false) {
    validate_shape(shape);
    if (numel(shape) != static_cast<int64_t>(data.size()))
        throw ContractError("tensor: shape " + shape_str(shape) + " does not match data length " +
                            std::to_string(data.size()));
    auto t = std::make_shared<Tensor<S>>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

template <class S>
TensorPtr<S> full(Shape shape, S value, bool requires_grad = false) {
    validate_shape(shape);
    std::vector<S> d(static_cast<size_t>(numel(shape)), value);
    return tensor<S>(std::move(shape), std::move(d), requires_grad);
}

template <class S>
TensorPtr<S> zeros(Shape shape, bool requires_grad = false) {
    return full<S>(std::move(shape), S(0), requires_grad);
}

template <class S>
TensorPtr<S> ones(Shape shape, bool requires_grad = false) {
    return full<S>(std::move(shape), S(1), requires_grad);
}

template <class S>
TensorPtr<S> scalar(S value) {
    return full<S>({1}, value);
}

// Gaussian init, the default for trainable weights.
template <class S>
TensorPtr<S> randn(Shape shape, Rng& rng, S stddev = S(1), bool requires_grad = false) {
    validate_shape(shape);
    std::vector<S> d(static_cast<size_t>(numel(shape)));
    for (auto& v : d) v = static_cast<S>(rng.normal()) * stddev;
    return tensor<S>(std::move(shape), std::move(d), requires_grad);
}

template <class S>
TensorPtr<S> clone_detached(const TensorPtr<S>& t, bool requires_grad = false) {
    return tensor<S>(t->shape, t->data, requires_grad);
}

} // namespace dede
