#pragma once

#include "deskmt/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace deskmt::nn {

/// Dense row-major matrix of doubles. Every activation in the model is a
/// 2-D matrix whose rows are (batch x position) tokens.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    std::size_t size() const { return data.size(); }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool operator==(const Tensor&) const = default;
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Named parameters in insertion order.
class ParameterStore {
public:
    Parameter& add(const std::string& name, std::size_t rows, std::size_t cols);

    bool contains(const std::string& name) const { return index_.contains(name); }
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return params_[i]; }
    const Parameter& operator[](std::size_t i) const { return params_[i]; }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad();
    std::size_t scalar_count() const;

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

struct Var {
    std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward walks
/// them in reverse. With requires_grad=false no backward closures are kept.
class Graph {
public:
    explicit Graph(bool requires_grad = true) : requires_grad_(requires_grad) {}

    bool requires_grad() const { return requires_grad_; }

    Var constant(Tensor value);
    /// Binds a parameter; gradients accumulate directly into `grad` when non-null.
    Var parameter(const Tensor& value, Tensor* grad);

    const Tensor& value(Var v) const;
    /// Gradient buffer for a node, allocated on first use.
    Tensor& grad(Var v);

    /// Called during backward with the node's own id.
    using Backward = std::function<void(Graph&, Var self)>;
    Var push(Tensor value, Backward backward);

    /// Seeds d(root)/d(root) = 1 for a 1x1 root and runs every closure.
    void backward(Var root);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        Tensor* external_grad = nullptr;
        Backward backward;
    };
    std::vector<Node> nodes_;
    bool requires_grad_;
};

struct AttentionShape {
    std::size_t batch = 1;
    std::size_t q_len = 1;
    std::size_t k_len = 1;
    std::size_t heads = 1;
    /// batch x k_len flags; empty means all keys valid. Key rows of batch b
    /// come from key batch 0 when the key tensor holds a single batch entry.
    std::vector<std::uint8_t> key_valid;
    bool causal = false;
};

// Ops. Shapes are (rows x cols); "N" is a token count.

/// Rows of `table` selected by ids, times `scale`.
Var embedding(Graph& g, Var table, std::span<const int> ids, double scale = 1.0);
Var add(Graph& g, Var a, Var b);
/// x (N x in) * w (in x out) + b (1 x out).
Var linear(Graph& g, Var x, Var w, Var b);
/// x (N x d) * w^T for w (V x d).
Var matmul_nt(Graph& g, Var x, Var w);
Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-5);
Var relu(Graph& g, Var x);
/// Inverted dropout; identity when p == 0.
Var dropout(Graph& g, Var x, double p, Rng& rng);
/// Multi-head scaled dot-product attention on pre-projected q, k, v.
Var attention(Graph& g, Var q, Var k, Var v, const AttentionShape& shape);
Var select_rows(Graph& g, Var x, std::span<const std::size_t> rows);

/// Mean over non-pad rows of (1-eps)*(-log p[target]) + eps * mean_{i != pad}(-log p[i]).
/// Returns a 1x1 node.
Var label_smoothed_nll(Graph& g, Var logits, std::span<const int> targets, double eps, int pad_id);

/// Row-wise log-softmax (no gradient).
Tensor log_softmax(const Tensor& logits);

}  // namespace deskmt::nn
