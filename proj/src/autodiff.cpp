#include "grimrepr/autodiff.hpp"

#include "grimrepr/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace grimrepr::ad {

namespace {

[[noreturn]] void shape_error(Op op, std::span<const Tensor* const> inputs, const std::string& why)
{
    std::string msg = std::string(op_name(op)) + ": " + why + " (inputs";
    for (const Tensor* t : inputs) msg += " " + shape_string(t->shape());
    throw std::invalid_argument(msg + ")");
}

int arity_of(Op op)
{
    switch (op) {
    case Op::Leaf: return 0;
    case Op::Affine: return 3;
    case Op::MatMul:
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: return 2;
    default: return 1;
    }
}

template <class F>
Tensor map_unary(const Tensor& x, F&& f)
{
    Tensor out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F&& f)
{
    Tensor out(a.shape());
    auto x = a.data();
    auto y = b.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
    return out;
}

Tensor compute(Op op, std::span<const Tensor* const> in, const Attrs& at)
{
    auto need_rank = [&](std::size_t idx, std::size_t rank) {
        if (in[idx]->rank() != rank) shape_error(op, in, "expected rank " + std::to_string(rank));
    };
    switch (op) {
    case Op::Leaf: throw std::logic_error("compute on leaf");
    case Op::Affine: {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        const Tensor& b = *in[2];
        if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.cols() != w.rows() || b.shape()[0] != w.cols())
            shape_error(op, in, "incompatible shapes");
        Tensor out({x.rows(), w.cols()});
        kernels::affine(x.data(), w.data(), b.data(), out.data(), x.rows(), x.cols(), w.cols());
        return out;
    }
    case Op::MatMul: {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (a.rank() != 2 || b.rank() != 2) shape_error(op, in, "expected matrices");
        kernels::GemmDims d;
        d.trans_a = at.trans_a;
        d.trans_b = at.trans_b;
        d.m = at.trans_a ? a.cols() : a.rows();
        d.k = at.trans_a ? a.rows() : a.cols();
        const std::size_t kb = at.trans_b ? b.cols() : b.rows();
        d.n = at.trans_b ? b.rows() : b.cols();
        if (d.k != kb) shape_error(op, in, "inner dimensions differ");
        Tensor out({d.m, d.n});
        kernels::gemm(a.data(), b.data(), out.data(), d);
        return out;
    }
    case Op::LeakyRelu: {
        const double slope = at.scalar;
        return map_unary(*in[0], [slope](double v) { return v > 0.0 ? v : slope * v; });
    }
    case Op::Tanh: return map_unary(*in[0], [](double v) { return std::tanh(v); });
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
        if (in[0]->shape() != in[1]->shape()) shape_error(op, in, "shapes differ");
        if (op == Op::Add) return map_binary(*in[0], *in[1], [](double a, double b) { return a + b; });
        if (op == Op::Sub) return map_binary(*in[0], *in[1], [](double a, double b) { return a - b; });
        if (op == Op::Mul) return map_binary(*in[0], *in[1], [](double a, double b) { return a * b; });
        return map_binary(*in[0], *in[1], [](double a, double b) { return a / b; });
    }
    case Op::Square: return map_unary(*in[0], [](double v) { return v * v; });
    case Op::Sqrt: return map_unary(*in[0], [](double v) { return std::sqrt(v); });
    case Op::Mean:
    case Op::Sum: {
        double acc = 0.0;
        for (double v : in[0]->data()) acc += v;
        if (op == Op::Mean) acc /= static_cast<double>(in[0]->size());
        return Tensor::scalar(acc);
    }
    case Op::RowSum: {
        need_rank(0, 2);
        const Tensor& x = *in[0];
        Tensor out({x.rows(), 1});
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double acc = 0.0;
            for (double v : x.row(r)) acc += v;
            out[r] = acc;
        }
        return out;
    }
    case Op::ColSum: {
        need_rank(0, 2);
        const Tensor& x = *in[0];
        Tensor out({x.cols()});
        for (std::size_t r = 0; r < x.rows(); ++r) {
            auto row = x.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
        }
        return out;
    }
    case Op::BroadcastRows: {
        need_rank(0, 1);
        const Tensor& v = *in[0];
        Tensor out({at.extent, v.size()});
        for (std::size_t r = 0; r < at.extent; ++r)
            for (std::size_t c = 0; c < v.size(); ++c) out.at(r, c) = v[c];
        return out;
    }
    case Op::BroadcastCols: {
        const Tensor& v = *in[0];
        if (v.rank() != 2 || v.cols() != 1) shape_error(op, in, "expected [B,1]");
        Tensor out({v.rows(), at.extent});
        for (std::size_t r = 0; r < v.rows(); ++r)
            for (std::size_t c = 0; c < at.extent; ++c) out.at(r, c) = v[r];
        return out;
    }
    case Op::BroadcastScalar: {
        if (in[0]->size() != 1) shape_error(op, in, "expected a single element");
        return Tensor(at.target, (*in[0])[0]);
    }
    case Op::Scale: {
        const double c = at.scalar;
        return map_unary(*in[0], [c](double v) { return c * v; });
    }
    case Op::AddScalar: {
        const double c = at.scalar;
        return map_unary(*in[0], [c](double v) { return v + c; });
    }
    case Op::RowNorm: {
        need_rank(0, 2);
        const Tensor& x = *in[0];
        Tensor out({x.rows(), 1});
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double acc = 0.0;
            for (double v : x.row(r)) acc += v * v;
            out[r] = std::sqrt(acc);
        }
        return out;
    }
    }
    throw std::logic_error("unknown op");
}

Graph& graph_of(std::span<const Var> vars)
{
    Graph* g = vars[0].graph;
    if (g == nullptr) throw std::invalid_argument("variable not attached to a graph");
    for (const Var& v : vars)
        if (v.graph != g) throw std::invalid_argument("variables belong to different graphs");
    return *g;
}

Var unary(Op op, Var x, Attrs attrs = {})
{
    const Var in[] = {x};
    return graph_of(in).apply(op, in, std::move(attrs));
}

Var binary(Op op, Var a, Var b, Attrs attrs = {})
{
    const Var in[] = {a, b};
    return graph_of(in).apply(op, in, std::move(attrs));
}

} // namespace

std::string_view op_name(Op op)
{
    switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Affine: return "affine";
    case Op::MatMul: return "matmul";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Tanh: return "tanh";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::RowSum: return "row_sum";
    case Op::ColSum: return "col_sum";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::BroadcastScalar: return "broadcast_scalar";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::RowNorm: return "row_norm";
    }
    return "?";
}

const Tensor& Var::value() const { return graph->value(*this); }

const Tensor& GradMap::at(Var leaf) const
{
    auto it = grads_.find(leaf.id);
    if (it == grads_.end()) throw std::out_of_range("no gradient recorded for node " + std::to_string(leaf.id));
    return it->second;
}

Var Graph::leaf(Tensor value, bool requires_grad)
{
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return self(static_cast<int>(nodes_.size()) - 1);
}

Var Graph::apply(Op op, std::span<const Var> inputs, Attrs attrs)
{
    const int arity = arity_of(op);
    if (op == Op::Leaf || static_cast<int>(inputs.size()) != arity)
        throw std::invalid_argument(std::string(op_name(op)) + ": wrong number of inputs");
    std::array<const Tensor*, 3> values{};
    Node n;
    n.op = op;
    n.arity = arity;
    for (int i = 0; i < arity; ++i) {
        const Var& v = inputs[static_cast<std::size_t>(i)];
        if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw std::invalid_argument(std::string(op_name(op)) + ": input not in this graph");
        n.inputs[static_cast<std::size_t>(i)] = v.id;
        values[static_cast<std::size_t>(i)] = &nodes_[static_cast<std::size_t>(v.id)].value;
        n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    n.value = compute(op, std::span<const Tensor* const>(values.data(), static_cast<std::size_t>(arity)), attrs);
    n.attrs = std::move(attrs);
    nodes_.push_back(std::move(n));
    return self(static_cast<int>(nodes_.size()) - 1);
}

std::vector<Var> Graph::vjp(int id, Var g, std::array<bool, 3> needed)
{
    // Copy what we need: apply() may reallocate nodes_.
    const Node& n0 = nodes_[static_cast<std::size_t>(id)];
    const Op op = n0.op;
    const Attrs at = n0.attrs;
    const Var x = self(n0.inputs[0]);
    const Var y2 = n0.arity > 1 ? self(n0.inputs[1]) : Var{};
    const Var y3 = n0.arity > 2 ? self(n0.inputs[2]) : Var{};
    const Var out = self(id);
    std::vector<Var> r(3);

    switch (op) {
    case Op::Leaf: break;
    case Op::Affine:
        if (needed[0]) r[0] = matmul(g, y2, false, true);
        if (needed[1]) r[1] = matmul(x, g, true, false);
        if (needed[2]) r[2] = col_sum(g);
        break;
    case Op::MatMul: {
        const Var a = x;
        const Var b = y2;
        if (!at.trans_a && !at.trans_b) {
            if (needed[0]) r[0] = matmul(g, b, false, true);
            if (needed[1]) r[1] = matmul(a, g, true, false);
        } else if (at.trans_a && !at.trans_b) {
            if (needed[0]) r[0] = matmul(b, g, false, true);
            if (needed[1]) r[1] = matmul(a, g, false, false);
        } else if (!at.trans_a && at.trans_b) {
            if (needed[0]) r[0] = matmul(g, b, false, false);
            if (needed[1]) r[1] = matmul(g, a, true, false);
        } else {
            if (needed[0]) r[0] = matmul(b, g, true, true);
            if (needed[1]) r[1] = matmul(g, a, true, true);
        }
        break;
    }
    case Op::LeakyRelu: {
        // d/dx is piecewise constant; its own derivative is zero almost everywhere.
        const double slope = at.scalar;
        Tensor mask = map_unary(x.value(), [slope](double v) { return v > 0.0 ? 1.0 : slope; });
        r[0] = mul(g, constant(std::move(mask)));
        break;
    }
    case Op::Tanh: r[0] = mul(g, add_scalar(scale(square(out), -1.0), 1.0)); break;
    case Op::Add:
        r[0] = g;
        r[1] = g;
        break;
    case Op::Sub:
        r[0] = g;
        if (needed[1]) r[1] = scale(g, -1.0);
        break;
    case Op::Mul:
        if (needed[0]) r[0] = mul(g, y2);
        if (needed[1]) r[1] = mul(g, x);
        break;
    case Op::Div:
        if (needed[0]) r[0] = div(g, y2);
        if (needed[1]) r[1] = scale(div(mul(g, out), y2), -1.0);
        break;
    case Op::Square: r[0] = scale(mul(g, x), 2.0); break;
    case Op::Sqrt: r[0] = div(scale(g, 0.5), out); break;
    case Op::Mean:
        r[0] = broadcast_scalar(scale(g, 1.0 / static_cast<double>(x.value().size())), x.value().shape());
        break;
    case Op::Sum: r[0] = broadcast_scalar(g, x.value().shape()); break;
    case Op::RowSum: r[0] = broadcast_cols(g, x.value().cols()); break;
    case Op::ColSum: r[0] = broadcast_rows(g, x.value().rows()); break;
    case Op::BroadcastRows: r[0] = col_sum(g); break;
    case Op::BroadcastCols: r[0] = row_sum(g); break;
    case Op::BroadcastScalar: {
        Var s = sum(g);
        if (x.value().rank() != 0) s = broadcast_scalar(s, x.value().shape());
        r[0] = s;
        break;
    }
    case Op::Scale: r[0] = scale(g, at.scalar); break;
    case Op::AddScalar: r[0] = g; break;
    case Op::RowNorm: {
        // g x / ||x||, kept differentiable through the norm node. A zero row
        // divides by 1 instead, which leaves its (zero) gradient unchanged.
        const Tensor& norms = out.value();
        Tensor zero_rows(norms.shape());
        for (std::size_t i = 0; i < norms.size(); ++i) zero_rows[i] = norms[i] > 0.0 ? 0.0 : 1.0;
        const Var safe = add(out, constant(std::move(zero_rows)));
        r[0] = mul(x, broadcast_cols(div(g, safe), x.value().cols()));
        break;
    }
    }
    (void)y3;
    return r;
}

std::vector<Var> Graph::grad(Var output, std::span<const Var> wrt)
{
    if (output.graph != this) throw std::invalid_argument("grad: output not in this graph");
    if (value(output).size() != 1)
        throw std::invalid_argument("grad: output must be scalar, got " + shape_string(value(output).shape()));
    const auto top = static_cast<std::size_t>(output.id);

    // Only propagate along paths that reach a requested leaf.
    std::vector<char> reaches(top + 1, 0);
    for (const Var& w : wrt) {
        if (w.graph != this) throw std::invalid_argument("grad: wrt not in this graph");
        if (static_cast<std::size_t>(w.id) <= top) reaches[static_cast<std::size_t>(w.id)] = 1;
    }
    for (std::size_t id = 0; id <= top; ++id) {
        const Node& n = nodes_[id];
        for (int i = 0; i < n.arity; ++i)
            if (reaches[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(i)])]) reaches[id] = 1;
    }

    std::vector<int> acc(top + 1, -1);
    acc[top] = leaf(Tensor(value(output).shape(), 1.0)).id;
    for (std::size_t id = top + 1; id-- > 0;) {
        if (acc[id] < 0) continue;
        const Node& n = nodes_[id];
        if (n.op == Op::Leaf || !n.requires_grad) continue;
        std::array<bool, 3> needed{};
        std::array<int, 3> ins = n.inputs;
        const int arity = n.arity;
        for (int i = 0; i < arity; ++i) {
            const auto in = static_cast<std::size_t>(ins[static_cast<std::size_t>(i)]);
            needed[static_cast<std::size_t>(i)] = nodes_[in].requires_grad && reaches[in];
        }
        if (!needed[0] && !needed[1] && !needed[2]) continue;
        std::vector<Var> parts = vjp(static_cast<int>(id), self(acc[id]), needed);
        for (int i = 0; i < arity; ++i) {
            const auto k = static_cast<std::size_t>(i);
            if (!needed[k]) continue;
            const auto in = static_cast<std::size_t>(ins[k]);
            acc[in] = acc[in] < 0 ? parts[k].id : add(self(acc[in]), parts[k]).id;
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (const Var& w : wrt) {
        const auto id = static_cast<std::size_t>(w.id);
        if (id <= top && acc[id] >= 0)
            result.push_back(self(acc[id]));
        else
            result.push_back(constant(Tensor(value(w).shape(), 0.0)));
    }
    return result;
}

GradMap Graph::backward(Var output)
{
    const std::size_t mark = nodes_.size();
    std::vector<Var> leaves;
    for (std::size_t id = 0; id < mark; ++id)
        if (nodes_[id].op == Op::Leaf && nodes_[id].requires_grad) leaves.push_back(self(static_cast<int>(id)));
    std::vector<Var> grads = grad(output, leaves);
    GradMap map;
    for (std::size_t i = 0; i < leaves.size(); ++i) map.grads_.emplace(leaves[i].id, value(grads[i]));
    nodes_.resize(mark);
    return map;
}

std::vector<Tensor> Graph::replay() const
{
    std::vector<Tensor> values;
    values.reserve(nodes_.size());
    for (const Node& n : nodes_) {
        if (n.op == Op::Leaf) {
            values.push_back(n.value);
            continue;
        }
        std::array<const Tensor*, 3> in{};
        for (int i = 0; i < n.arity; ++i)
            in[static_cast<std::size_t>(i)] = &values[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(i)])];
        values.push_back(compute(n.op, std::span<const Tensor* const>(in.data(), static_cast<std::size_t>(n.arity)),
                                 n.attrs));
    }
    return values;
}

Var affine(Var x, Var w, Var b)
{
    const Var in[] = {x, w, b};
    return graph_of(in).apply(Op::Affine, in);
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b)
{
    Attrs at;
    at.trans_a = trans_a;
    at.trans_b = trans_b;
    return binary(Op::MatMul, a, b, at);
}

Var leaky_relu(Var x, double slope)
{
    Attrs at;
    at.scalar = slope;
    return unary(Op::LeakyRelu, x, at);
}

Var tanh(Var x) { return unary(Op::Tanh, x); }
Var add(Var a, Var b) { return binary(Op::Add, a, b); }
Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }
Var div(Var a, Var b) { return binary(Op::Div, a, b); }
Var square(Var x) { return unary(Op::Square, x); }
Var sqrt(Var x) { return unary(Op::Sqrt, x); }
Var mean(Var x) { return unary(Op::Mean, x); }
Var sum(Var x) { return unary(Op::Sum, x); }
Var row_sum(Var x) { return unary(Op::RowSum, x); }
Var col_sum(Var x) { return unary(Op::ColSum, x); }

Var broadcast_rows(Var v, std::size_t rows)
{
    Attrs at;
    at.extent = rows;
    return unary(Op::BroadcastRows, v, at);
}

Var broadcast_cols(Var v, std::size_t cols)
{
    Attrs at;
    at.extent = cols;
    return unary(Op::BroadcastCols, v, at);
}

Var broadcast_scalar(Var s, const Shape& shape)
{
    Attrs at;
    at.target = shape;
    return unary(Op::BroadcastScalar, s, at);
}

Var scale(Var x, double c)
{
    Attrs at;
    at.scalar = c;
    return unary(Op::Scale, x, at);
}

Var add_scalar(Var x, double c)
{
    Attrs at;
    at.scalar = c;
    return unary(Op::AddScalar, x, at);
}

Var row_norm(Var x) { return unary(Op::RowNorm, x); }

Var input_gradient_norm(Graph& graph, const RowFunction& net, const Tensor& x_hat, const GradNormOptions& options,
                        Rng* rng)
{
    if (x_hat.rank() != 2) throw std::invalid_argument("input_gradient_norm: x_hat must be [B,n]");
    const std::size_t rows = x_hat.rows();
    const std::size_t cols = x_hat.cols();
    auto check = [rows](Var d) {
        const Shape& s = d.value().shape();
        if (s.size() != 2 || s[0] != rows || s[1] != 1)
            throw std::invalid_argument("input_gradient_norm: net output must be one scalar per row, got " +
                                        shape_string(s));
    };

    if (options.mode == PenaltyMode::Exact) {
        const Var x = graph.leaf(x_hat, true);
        const Var d = net(x);
        check(d);
        const Var wrt[] = {x};
        const Var gx = graph.grad(sum(d), wrt)[0];
        return row_norm(gx);
    }

    if (rng == nullptr) throw std::invalid_argument("input_gradient_norm: random-direction mode needs an rng");
    const double eps = options.epsilon;
    Tensor plus = x_hat;
    Tensor minus = x_hat;
    std::vector<double> u(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double norm2 = 0.0;
        for (double& v : u) {
            v = rng->normal();
            norm2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t c = 0; c < cols; ++c) {
            plus.at(r, c) += eps * u[c] * inv;
            minus.at(r, c) -= eps * u[c] * inv;
        }
    }
    const Var dp = net(graph.constant(std::move(plus)));
    check(dp);
    const Var dm = net(graph.constant(std::move(minus)));
    const Var directional = scale(sub(dp, dm), 1.0 / (2.0 * eps));
    return row_norm(scale(directional, std::sqrt(static_cast<double>(cols))));
}

} // namespace grimrepr::ad
