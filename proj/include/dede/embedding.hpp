#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dede/errors.hpp"

namespace dede {

// Row-major matrix of embedding vectors, the lingua franca between the
// encoder, the detector, and the evaluation tooling.
struct EmbeddingMatrix {
    int count = 0;
    int dim = 0;
    std::vector<float> values; // count * dim

    std::span<const float> row(int i) const {
        return {values.data() + static_cast<size_t>(i) * dim, static_cast<size_t>(dim)};
    }

    void validate() const {
        if (count < 0 || dim <= 0 || values.size() != static_cast<size_t>(count) * dim)
            throw ContractError("embedding matrix: inconsistent dimensions");
    }
};

inline float l2_distance(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return static_cast<float>(std::sqrt(acc));
}

std::vector<float> embedding_centroid(const EmbeddingMatrix& m);
std::vector<float> distances_to(const EmbeddingMatrix& m, std::span<const float> point);

// Linear-interpolation quantile of a sample (q in [0,1]).
float quantile(std::vector<float> values, float q);

} // namespace dede
