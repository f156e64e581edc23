#include "grimrepr/mlp.hpp"

#include "grimrepr/kernels.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace grimrepr {

std::string to_string(Activation a)
{
    switch (a) {
    case Activation::Identity: return "identity";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Tanh: return "tanh";
    }
    return "?";
}

Activation activation_from_string(const std::string& s)
{
    if (s == "identity") return Activation::Identity;
    if (s == "leaky_relu") return Activation::LeakyRelu;
    if (s == "tanh") return Activation::Tanh;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

namespace {

MlpSpec validated(MlpSpec spec)
{
    if (spec.sizes.size() < 2) throw std::invalid_argument("mlp needs at least input and output sizes");
    for (std::size_t s : spec.sizes)
        if (s == 0) throw std::invalid_argument("mlp layer size must be positive");
    return spec;
}

void activate(Activation a, double slope, std::span<double> v)
{
    switch (a) {
    case Activation::Identity: break;
    case Activation::LeakyRelu:
        for (double& x : v) x = x > 0.0 ? x : slope * x;
        break;
    case Activation::Tanh:
        for (double& x : v) x = std::tanh(x);
        break;
    }
}

ad::Var activate(Activation a, double slope, ad::Var v)
{
    switch (a) {
    case Activation::Identity: return v;
    case Activation::LeakyRelu: return ad::leaky_relu(v, slope);
    case Activation::Tanh: return ad::tanh(v);
    }
    return v;
}

} // namespace

Mlp::Mlp(MlpSpec spec, Rng& rng) : spec_(validated(std::move(spec)))
{
    for (std::size_t l = 0; l < layer_count(); ++l) {
        const std::size_t in = spec_.sizes[l];
        const std::size_t out = spec_.sizes[l + 1];
        const bool last = l + 1 == layer_count();
        const double bound = last ? std::sqrt(6.0 / static_cast<double>(in + out))
                                  : std::sqrt(6.0 / static_cast<double>(in));
        Tensor w({in, out});
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        params_.push_back(std::move(w));
        params_.emplace_back(Shape{out}, 0.0);
    }
}

Mlp Mlp::zeros(MlpSpec spec)
{
    Mlp m;
    m.spec_ = validated(std::move(spec));
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        m.params_.emplace_back(Shape{m.spec_.sizes[l], m.spec_.sizes[l + 1]}, 0.0);
        m.params_.emplace_back(Shape{m.spec_.sizes[l + 1]}, 0.0);
    }
    return m;
}

std::size_t Mlp::hidden_size(std::size_t layer) const
{
    check_layer(layer);
    return spec_.sizes[layer];
}

void Mlp::check_layer(std::size_t layer) const
{
    if (layer < 1 || layer > hidden_count())
        throw std::out_of_range("hidden layer " + std::to_string(layer) + " not in [1, " +
                                std::to_string(hidden_count()) + "]");
}

std::vector<std::string> Mlp::param_names() const
{
    std::vector<std::string> names;
    for (std::size_t l = 0; l < layer_count(); ++l) {
        names.push_back("layer" + std::to_string(l) + ".weight");
        names.push_back("layer" + std::to_string(l) + ".bias");
    }
    return names;
}

std::size_t Mlp::parameter_count() const
{
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.size();
    return n;
}

std::vector<ad::Var> Mlp::bind(ad::Graph& graph, bool trainable) const
{
    std::vector<ad::Var> vars;
    vars.reserve(params_.size());
    for (const Tensor& p : params_) vars.push_back(graph.leaf(p, trainable));
    return vars;
}

ad::Var Mlp::forward(ad::Graph& graph, ad::Var x, std::span<const ad::Var> bound) const
{
    (void)graph;
    if (bound.size() != params_.size()) throw std::invalid_argument("mlp forward: wrong number of bound parameters");
    ad::Var h = x;
    for (std::size_t l = 0; l < layer_count(); ++l) {
        h = ad::affine(h, bound[2 * l], bound[2 * l + 1]);
        h = activate(l + 1 == layer_count() ? spec_.output : spec_.hidden, spec_.slope, h);
    }
    return h;
}

ad::Var Mlp::forward_to(ad::Graph& graph, ad::Var x, std::span<const ad::Var> bound, std::size_t layer) const
{
    (void)graph;
    check_layer(layer);
    if (bound.size() < 2 * layer) throw std::invalid_argument("mlp forward_to: too few bound parameters");
    ad::Var h = x;
    for (std::size_t l = 0; l < layer; ++l) h = activate(spec_.hidden, spec_.slope, ad::affine(h, bound[2 * l], bound[2 * l + 1]));
    return h;
}

Tensor Mlp::run(const Tensor& x, std::size_t affine_layers) const
{
    if (x.rank() != 2 || x.cols() != input_dim())
        throw std::invalid_argument("mlp: input " + shape_string(x.shape()) + " does not match input size " +
                                    std::to_string(input_dim()));
    Tensor h = x;
    for (std::size_t l = 0; l < affine_layers; ++l) {
        const Tensor& w = params_[2 * l];
        const Tensor& b = params_[2 * l + 1];
        Tensor out({h.rows(), w.cols()});
        kernels::affine(h.data(), w.data(), b.data(), out.data(), h.rows(), w.rows(), w.cols());
        activate(l + 1 == layer_count() ? spec_.output : spec_.hidden, spec_.slope, out.data());
        h = std::move(out);
    }
    return h;
}

Tensor Mlp::predict(const Tensor& x) const { return run(x, layer_count()); }

Tensor Mlp::activations(const Tensor& x, std::size_t layer) const
{
    check_layer(layer);
    return run(x, layer);
}

std::uint64_t Mlp::fingerprint() const
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const Tensor& p : params_) {
        for (double v : p.data()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

bool Mlp::identical(const Mlp& other) const
{
    if (!(spec_ == other.spec_) || params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (!params_[i].identical(other.params_[i])) return false;
    return true;
}

OptimizerKind optimizer_from_string(const std::string& s)
{
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

double global_norm(std::span<const Tensor> tensors)
{
    double acc = 0.0;
    for (const Tensor& t : tensors)
        for (double v : t.data()) acc += v * v;
    return std::sqrt(acc);
}

bool all_finite(std::span<const Tensor> tensors)
{
    for (const Tensor& t : tensors)
        for (double v : t.data())
            if (!std::isfinite(v)) return false;
    return true;
}

void Optimizer::step(std::vector<Tensor>& params, std::vector<Tensor> grads)
{
    if (grads.size() != params.size()) throw std::invalid_argument("optimizer: gradient count mismatch");
    if (config_.clip_norm > 0.0) {
        const double norm = global_norm(grads);
        if (norm > config_.clip_norm) {
            const double f = config_.clip_norm / norm;
            for (Tensor& g : grads)
                for (double& v : g.data()) v *= f;
        }
    }
    if (first_.empty()) {
        for (const Tensor& p : params) first_.emplace_back(p.shape(), 0.0);
        if (config_.kind == OptimizerKind::Adam)
            for (const Tensor& p : params) second_.emplace_back(p.shape(), 0.0);
    }
    ++steps_;
    if (config_.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params[i].data();
            auto g = grads[i].data();
            auto m = first_[i].data();
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = config_.momentum * m[j] + g[j];
                p[j] -= config_.lr * m[j];
            }
        }
        return;
    }
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        auto g = grads[i].data();
        auto m = first_[i].data();
        auto v = second_[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
            p[j] -= config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
        }
    }
}

std::vector<Tensor> collect(const ad::GradMap& grads, std::span<const ad::Var> bound)
{
    std::vector<Tensor> out;
    out.reserve(bound.size());
    for (const ad::Var& v : bound) out.push_back(grads.at(v));
    return out;
}

} // namespace grimrepr
