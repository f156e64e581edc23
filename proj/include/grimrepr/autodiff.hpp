#pragma once

#include "grimrepr/rng.hpp"
#include "grimrepr/tensor.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

// Reverse-mode differentiation over dense Tensors.
//
// A Graph is a tape of nodes in creation order. Every primitive's
// vector-Jacobian product is itself expressed with graph primitives, so the
// gradient of a graph is again a graph and may be differentiated once more.
// That is what makes the input-gradient-norm penalty trainable.

namespace grimrepr::ad {

enum class Op : std::uint8_t {
    Leaf,
    Affine,
    MatMul,
    LeakyRelu,
    Tanh,
    Add,
    Sub,
    Mul,
    Div,
    Square,
    Sqrt,
    Mean,
    Sum,
    RowSum,
    ColSum,
    BroadcastRows,
    BroadcastCols,
    BroadcastScalar,
    Scale,
    AddScalar,
    RowNorm,
};

std::string_view op_name(Op op);

class Graph;

/// Handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool valid() const { return graph != nullptr && id >= 0; }
};

/// Per-primitive parameters. Unused fields stay at their defaults.
struct Attrs {
    double scalar = 0.0;    // slope, scale or offset
    std::size_t extent = 0; // broadcast extent
    bool trans_a = false;
    bool trans_b = false;
    Shape target;           // BroadcastScalar output shape
};

struct Node {
    Op op = Op::Leaf;
    std::array<int, 3> inputs{-1, -1, -1};
    int arity = 0;
    Attrs attrs;
    Tensor value;
    bool requires_grad = false;
};

/// Gradients of a scalar with respect to every requires-grad leaf.
class GradMap {
public:
    const Tensor& at(Var leaf) const;
    bool contains(Var leaf) const { return grads_.contains(leaf.id); }
    std::size_t size() const { return grads_.size(); }

private:
    friend class Graph;
    std::unordered_map<int, Tensor> grads_;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Append a primitive node; validates shapes and computes its value.
    Var apply(Op op, std::span<const Var> inputs, Attrs attrs = {});

    const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Tensor& value(Var v) const { return node(v).value; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient nodes d(output)/d(wrt[i]). The result is part of this graph,
    /// so it can feed further primitives and be differentiated again.
    /// Leaves the output does not depend on get a zero constant.
    std::vector<Var> grad(Var output, std::span<const Var> wrt);

    /// d(output)/d(leaf) for every requires-grad leaf in the graph.
    GradMap backward(Var output);

    /// Recompute every non-leaf node from the stored leaves, in order.
    std::vector<Tensor> replay() const;

private:
    std::vector<Var> vjp(int id, Var upstream, std::array<bool, 3> needed);
    Var self(int id) { return Var{this, id}; }

    std::vector<Node> nodes_;
};

// Primitives. All inputs must belong to the same graph.

/// x [B,in] . W [in,out] + b [out]
Var affine(Var x, Var w, Var b);
/// op(a) . op(b), with optional transposes.
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var leaky_relu(Var x, double slope);
Var tanh(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var square(Var x);
Var sqrt(Var x);
Var mean(Var x);
Var sum(Var x);
/// [B,n] -> [B,1]
Var row_sum(Var x);
/// [B,n] -> [n]
Var col_sum(Var x);
/// [n] -> [rows,n]
Var broadcast_rows(Var v, std::size_t rows);
/// [B,1] -> [B,cols]
Var broadcast_cols(Var v, std::size_t cols);
/// scalar -> shape
Var broadcast_scalar(Var s, const Shape& shape);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
/// Euclidean norm of each row: [B,n] -> [B,1]
Var row_norm(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var x) { return scale(x, c); }
inline Var operator*(Var x, double c) { return scale(x, c); }
inline Var operator-(Var x) { return scale(x, -1.0); }

/// How the WGAN-GP input-gradient norm is obtained.
enum class PenaltyMode : std::uint8_t {
    Exact,           // double backward through the critic
    RandomDirection, // symmetric finite difference along a random unit direction
};

struct GradNormOptions {
    PenaltyMode mode = PenaltyMode::Exact;
    double epsilon = 1e-3; // step for RandomDirection
};

/// Scalar-per-row differentiable function of one input batch.
using RowFunction = std::function<Var(Var)>;

/// Per-row ||d net(x)/dx||_2 at x_hat, as a [B,1] node differentiable with
/// respect to whatever parameters `net` closes over.
///
/// RandomDirection returns sqrt(n) * |(net(x+eps u) - net(x-eps u)) / (2 eps)|
/// with u uniform on the unit sphere; its square is an unbiased estimate of
/// the squared norm. `rng` is only used in that mode.
Var input_gradient_norm(Graph& graph, const RowFunction& net, const Tensor& x_hat, const GradNormOptions& options,
                        Rng* rng = nullptr);

} // namespace grimrepr::ad
