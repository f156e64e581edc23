#pragma once

// Oracles shared by the unit tests and the acceptance runner. Everything here
// is computed independently of the library's own derivative code.

#include "grimrepr/autodiff.hpp"
#include "grimrepr/generative_memory.hpp"
#include "grimrepr/mlp.hpp"
#include "grimrepr/rng.hpp"
#include "grimrepr/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace grimrepr::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t(shape);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Relative error with a small floor so that near-zero derivatives are
/// compared on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-3)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Builds a scalar from the given leaves.
using ScalarBuilder = std::function<ad::Var(ad::Graph&, std::span<const ad::Var>)>;

inline double evaluate_scalar(const ScalarBuilder& f, const std::vector<Tensor>& inputs)
{
    ad::Graph g;
    std::vector<ad::Var> leaves;
    // Differentiable leaves, so builders that take inner gradients see them.
    for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
    return f(g, leaves).value().item();
}

/// Largest relative error between reverse-mode gradients of `f` and central
/// differences, over every coordinate of every input.
inline double gradient_error(const ScalarBuilder& f, std::vector<Tensor> inputs, double h = 1e-6)
{
    ad::Graph g;
    std::vector<ad::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
    const ad::GradMap grads = g.backward(f(g, leaves));

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor& analytic = grads.at(leaves[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double keep = inputs[k][i];
            inputs[k][i] = keep + h;
            const double up = evaluate_scalar(f, inputs);
            inputs[k][i] = keep - h;
            const double down = evaluate_scalar(f, inputs);
            inputs[k][i] = keep;
            worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
        }
    }
    return worst;
}

/// Loss of a network whose parameters are bound by the caller.
using NetLoss = std::function<ad::Var(ad::Graph&, std::span<const ad::Var>)>;

/// The same check for a network's parameters, perturbed in place.
inline double parameter_gradient_error(Mlp& net, const NetLoss& loss, double h = 1e-6)
{
    std::vector<Tensor> analytic;
    {
        ad::Graph g;
        const auto bound = net.bind(g, true);
        analytic = collect(g.backward(loss(g, bound)), bound);
    }
    auto value = [&] {
        ad::Graph g;
        const auto bound = net.bind(g, false);
        return loss(g, bound).value().item();
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < net.params().size(); ++k) {
        Tensor& p = net.params()[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double keep = p[i];
            p[i] = keep + h;
            const double up = value();
            p[i] = keep - h;
            const double down = value();
            p[i] = keep;
            worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * h)));
        }
    }
    return worst;
}

/// Straight-line forward pass of a fully connected leaky-rectifier network,
/// written without the library's kernels.
inline std::vector<double> reference_forward(const Mlp& net, std::vector<double> x, std::size_t stop_after_layers)
{
    const auto& p = net.params();
    for (std::size_t l = 0; l < stop_after_layers; ++l) {
        const Tensor& w = p[2 * l];
        const Tensor& b = p[2 * l + 1];
        std::vector<double> y(w.cols());
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < w.rows(); ++i) acc += x[i] * w.at(i, j);
            y[j] = acc + b[j];
        }
        const bool last = l + 1 == net.layer_count();
        const Activation act = last ? net.spec().output : net.spec().hidden;
        for (double& v : y) {
            if (act == Activation::LeakyRelu) v = v > 0.0 ? v : net.spec().slope * v;
            if (act == Activation::Tanh) v = std::tanh(v);
        }
        x = std::move(y);
    }
    return x;
}

/// Value iteration on a finite deterministic MDP. next[s][a], reward[s][a].
inline std::vector<std::vector<double>> value_iteration(const std::vector<std::vector<std::size_t>>& next,
                                                        const std::vector<std::vector<double>>& reward, double gamma,
                                                        double tol = 1e-13)
{
    const std::size_t ns = next.size();
    std::vector<std::vector<double>> q(ns, std::vector<double>(next[0].size(), 0.0));
    for (;;) {
        double change = 0.0;
        auto fresh = q;
        for (std::size_t s = 0; s < ns; ++s)
            for (std::size_t a = 0; a < q[s].size(); ++a) {
                const auto& qn = q[next[s][a]];
                fresh[s][a] = reward[s][a] + gamma * *std::max_element(qn.begin(), qn.end());
                change = std::max(change, std::abs(fresh[s][a] - q[s][a]));
            }
        q = std::move(fresh);
        if (change < tol) return q;
    }
}

/// Moments of an equal-weight mixture of isotropic 2-D Gaussians.
struct Moments2 {
    std::array<double, 2> mean{};
    std::array<double, 4> cov{}; // row-major 2x2
};

inline Moments2 mixture_moments(const std::vector<std::array<double, 2>>& centers, double std)
{
    Moments2 m;
    const double w = 1.0 / static_cast<double>(centers.size());
    for (const auto& c : centers)
        for (int d = 0; d < 2; ++d) m.mean[d] += w * c[d];
    // Law of total covariance: within-component plus between-component.
    m.cov = {std * std, 0.0, 0.0, std * std};
    for (const auto& c : centers)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) m.cov[2 * i + j] += w * (c[i] - m.mean[i]) * (c[j] - m.mean[j]);
    return m;
}

inline Moments2 sample_moments(const Tensor& x)
{
    Moments2 m;
    const double n = static_cast<double>(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (int d = 0; d < 2; ++d) m.mean[d] += x.at(r, d) / n;
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) m.cov[2 * i + j] += (x.at(r, i) - m.mean[i]) * (x.at(r, j) - m.mean[j]) / n;
    return m;
}

/// ||got - want|| / ||want|| over the mean vector and over the covariance
/// matrix (Frobenius), returned as {mean, cov}.
inline std::array<double, 2> moment_errors(const Moments2& got, const Moments2& want)
{
    auto rel = [](std::span<const double> a, std::span<const double> b) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            num += (a[i] - b[i]) * (a[i] - b[i]);
            den += b[i] * b[i];
        }
        return std::sqrt(num / den);
    };
    return {rel(got.mean, want.mean), rel(got.cov, want.cov)};
}

/// Two-component planar mixture used to check that the adversarial trainer
/// reproduces a known distribution.
struct MixtureFixture {
    std::vector<std::array<double, 2>> centers{{0.6, 0.4}, {0.2, -0.2}};
    double std = 0.1;

    Tensor draw(std::size_t n, Rng& rng) const
    {
        Tensor x({n, 2});
        for (std::size_t r = 0; r < n; ++r) {
            const auto& c = centers[rng.index(centers.size())];
            x.at(r, 0) = c[0] + std * rng.normal();
            x.at(r, 1) = c[1] + std * rng.normal();
        }
        return x;
    }

    static GanConfig config()
    {
        GanConfig c;
        c.latent_dim = 8;
        c.generator_hidden = {64, 64};
        c.critic_hidden = {64, 64};
        c.steps = 60000;
        c.batch_size = 128;
        c.generator_optimizer.lr = 1e-4;
        c.critic_optimizer.lr = 5e-4;
        c.generator_optimizer.beta1 = 0.0;
        c.critic_optimizer.beta1 = 0.0;
        return c;
    }

    /// Moments of 20000 samples from a generator trained on the mixture.
    Moments2 trained_moments(std::uint64_t seed) const
    {
        const GanConfig c = config();
        Rng init(seed);
        GanBundle b = make_gan(2, 0, GanMode::RePR, c, init);
        const RealSampler real = [this](std::size_t n, Rng& rng) { return draw(n, rng); };
        const GanTrainResult r = train_gan(std::move(b), real, nullptr, c, seed);
        Rng out(mix_seed(seed, 99));
        return sample_moments(r.bundle.sample(20000, out));
    }
};

} // namespace grimrepr::testing
