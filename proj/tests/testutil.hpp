#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dede/graph.hpp"
#include "dede/ops.hpp"

namespace dede::testutil {

struct GradCheckResult {
    bool ok = true;
    std::string detail;
    double worst_rel = 0.0;
    int checked = 0;
};

// Central finite-difference check of reverse-mode gradients.
//
// `loss_fn` rebuilds the forward pass from the given parameter tensors every
// time it is called and returns the scalar loss value. One recorded backward
// pass provides the analytic gradients; each parameter entry is then
// perturbed by +-h for the numeric estimate. `sample` limits how many
// entries per tensor are probed (0 = all), drawn deterministically.
inline GradCheckResult grad_check(const std::function<TensorPtr<double>()>& loss_fn,
                                  const std::vector<TensorPtr<double>>& params,
                                  double h = 1e-5, double rtol = 1e-5, double atol = 1e-8,
                                  int sample = 0, uint64_t seed = 1234) {
    GradCheckResult res;
    for (auto& p : params) p->zero_grad();
    {
        Graph<double> g;
        GraphScope<double> scope(g);
        auto loss = loss_fn();
        g.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
        p->zero_grad();
    }

    Rng pick(seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        std::vector<size_t> idx;
        if (sample <= 0 || static_cast<size_t>(sample) >= p->data.size()) {
            for (size_t i = 0; i < p->data.size(); ++i) idx.push_back(i);
        } else {
            auto chosen = pick.subset(static_cast<int>(p->data.size()), sample);
            for (int c : chosen) idx.push_back(static_cast<size_t>(c));
        }
        for (size_t i : idx) {
            double keep = p->data[i];
            p->data[i] = keep + h;
            double up = loss_fn()->item();
            p->data[i] = keep - h;
            double dn = loss_fn()->item();
            p->data[i] = keep;
            double fd = (up - dn) / (2.0 * h);
            double an = analytic[pi][i];
            double err = std::abs(an - fd);
            double tol = std::max(atol, rtol * std::max(std::abs(an), std::abs(fd)));
            double rel = err / std::max({std::abs(an), std::abs(fd), atol});
            res.worst_rel = std::max(res.worst_rel, rel);
            ++res.checked;
            if (err > tol) {
                res.ok = false;
                res.detail = "param " + std::to_string(pi) + " entry " + std::to_string(i) +
                             ": analytic " + std::to_string(an) + " vs fd " + std::to_string(fd);
                return res;
            }
        }
    }
    return res;
}

} // namespace dede::testutil
