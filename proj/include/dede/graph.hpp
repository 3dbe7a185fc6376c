#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "dede/tensor.hpp"

namespace dede {

// Tape of primitive applications. Nodes are appended in execution order, so
// the record is topological by construction; backward() walks it once in
// reverse, moving gradient from each node's output to its inputs.
//
// A graph and the tensors recorded on it belong to one execution context.
template <class S>
class Graph {
public:
    struct Node {
        const char* op;
        std::vector<TensorPtr<S>> inputs;
        TensorPtr<S> output;
        std::function<void()> pull; // accumulate output->grad into inputs' grads
    };

    void record(const char* op, std::vector<TensorPtr<S>> inputs, TensorPtr<S> output,
                std::function<void()> pull) {
        nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(pull)});
    }

    size_t node_count() const { return nodes_.size(); }

    const std::vector<Node>& nodes() const { return nodes_; }

    // Seeds the scalar loss with unit gradient and runs the reverse pass.
    // Every requires_grad tensor reachable from the loss accumulates into
    // its grad buffer; accumulation is additive across multiple uses.
    void backward(const TensorPtr<S>& loss) {
        if (loss->size() != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(loss->shape));
        bool reachable = false;
        for (const auto& n : nodes_)
            if (n.output == loss) { reachable = true; break; }
        if (!reachable)
            throw ContractError("backward: loss tensor was not produced by this graph");
        loss->ensure_grad();
        loss->grad[0] += S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output->grad.empty()) continue; // no gradient flowed here
            it->pull();
        }
    }

    void clear() { nodes_.clear(); }

    static Graph*& active() {
        thread_local Graph* g = nullptr;
        return g;
    }

private:
    std::vector<Node> nodes_;
};

// RAII activation of a graph for recording. Ops record themselves onto the
// active graph whenever any input requires grad; with no active graph the
// same calls run as pure inference.
template <class S>
class GraphScope {
public:
    explicit GraphScope(Graph<S>& g) : prev_(Graph<S>::active()) { Graph<S>::active() = &g; }
    ~GraphScope() { Graph<S>::active() = prev_; }
    GraphScope(const GraphScope&) = delete;
    GraphScope& operator=(const GraphScope&) = delete;

private:
    Graph<S>* prev_;
};

} // namespace dede
