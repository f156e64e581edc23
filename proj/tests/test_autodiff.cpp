#include "grimrepr/autodiff.hpp"
#include "grimrepr/mlp.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace grimrepr;
using namespace grimrepr::testing;

namespace {

constexpr int kPoints = 100;

struct Primitive {
    const char* name;
    std::vector<Shape> shapes;
    double lo, hi; // input range
    std::function<ad::Var(std::span<const ad::Var>)> apply;
};

std::vector<Primitive> primitives()
{
    using V = std::span<const ad::Var>;
    return {
        {"affine", {{3, 4}, {4, 2}, {2}}, -1, 1, [](V v) { return ad::affine(v[0], v[1], v[2]); }},
        {"matmul", {{3, 4}, {4, 2}}, -1, 1, [](V v) { return ad::matmul(v[0], v[1]); }},
        {"matmul_ta", {{4, 3}, {4, 2}}, -1, 1, [](V v) { return ad::matmul(v[0], v[1], true, false); }},
        {"matmul_tb", {{3, 4}, {2, 4}}, -1, 1, [](V v) { return ad::matmul(v[0], v[1], false, true); }},
        {"matmul_tab", {{4, 3}, {2, 4}}, -1, 1, [](V v) { return ad::matmul(v[0], v[1], true, true); }},
        {"leaky_relu", {{3, 4}}, -1, 1, [](V v) { return ad::leaky_relu(v[0], 0.2); }},
        {"tanh", {{3, 4}}, -2, 2, [](V v) { return ad::tanh(v[0]); }},
        {"add", {{3, 4}, {3, 4}}, -1, 1, [](V v) { return ad::add(v[0], v[1]); }},
        {"sub", {{3, 4}, {3, 4}}, -1, 1, [](V v) { return ad::sub(v[0], v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, -1, 1, [](V v) { return ad::mul(v[0], v[1]); }},
        {"div", {{3, 4}, {3, 4}}, 0.5, 1.5, [](V v) { return ad::div(v[0], v[1]); }},
        {"square", {{3, 4}}, -1, 1, [](V v) { return ad::square(v[0]); }},
        {"sqrt", {{3, 4}}, 0.2, 2, [](V v) { return ad::sqrt(v[0]); }},
        {"mean", {{3, 4}}, -1, 1, [](V v) { return ad::mean(v[0]); }},
        {"sum", {{3, 4}}, -1, 1, [](V v) { return ad::sum(v[0]); }},
        {"row_sum", {{3, 4}}, -1, 1, [](V v) { return ad::row_sum(v[0]); }},
        {"col_sum", {{3, 4}}, -1, 1, [](V v) { return ad::col_sum(v[0]); }},
        {"broadcast_rows", {{4}}, -1, 1, [](V v) { return ad::broadcast_rows(v[0], 3); }},
        {"broadcast_cols", {{3, 1}}, -1, 1, [](V v) { return ad::broadcast_cols(v[0], 4); }},
        {"broadcast_scalar", {{}}, -1, 1, [](V v) { return ad::broadcast_scalar(v[0], Shape{3, 4}); }},
        {"scale", {{3, 4}}, -1, 1, [](V v) { return ad::scale(v[0], -2.5); }},
        {"add_scalar", {{3, 4}}, -1, 1, [](V v) { return ad::add_scalar(v[0], 0.75); }},
        {"row_norm", {{3, 4}}, 0.1, 1, [](V v) { return ad::row_norm(v[0]); }},
    };
}

std::vector<Tensor> draw_inputs(const Primitive& p, Rng& rng)
{
    std::vector<Tensor> inputs;
    for (const auto& s : p.shapes) inputs.push_back(random_tensor(s, rng, p.lo, p.hi));
    return inputs;
}

/// sum(w * op(inputs)) with fixed random weights, so no output coordinate is
/// hidden by a symmetric reduction.
ScalarBuilder weighted(const Primitive& p, const Tensor& w)
{
    return [&p, w](ad::Graph& g, std::span<const ad::Var> v) {
        return ad::sum(ad::mul(p.apply(v), g.constant(w)));
    };
}

Shape output_shape(const Primitive& p, Rng& rng)
{
    ad::Graph g;
    std::vector<ad::Var> v;
    for (auto& t : draw_inputs(p, rng)) v.push_back(g.constant(t));
    return p.apply(v).shape();
}

} // namespace

TEST(Autodiff, EveryPrimitiveMatchesCentralDifferences)
{
    for (const auto& p : primitives()) {
        Rng rng(7);
        const Tensor w = random_tensor(output_shape(p, rng), rng);
        double worst = 0.0;
        for (int k = 0; k < kPoints; ++k) worst = std::max(worst, gradient_error(weighted(p, w), draw_inputs(p, rng)));
        EXPECT_LT(worst, 1e-4) << p.name;
    }
}

TEST(Autodiff, GradientGraphsDifferentiateAgain)
{
    // h(x) = sum(u * d/dx sum(w * op(x))) exercises every vector-Jacobian
    // product as a differentiable graph.
    for (const auto& p : primitives()) {
        Rng rng(11);
        const Tensor w = random_tensor(output_shape(p, rng), rng);
        std::vector<Tensor> us;
        for (const auto& s : p.shapes) us.push_back(random_tensor(s, rng));
        const ScalarBuilder inner = weighted(p, w);
        const ScalarBuilder outer = [&](ad::Graph& g, std::span<const ad::Var> v) {
            const auto grads = g.grad(inner(g, v), v);
            ad::Var total = ad::sum(ad::mul(grads[0], g.constant(us[0])));
            for (std::size_t i = 1; i < grads.size(); ++i)
                total = ad::add(total, ad::sum(ad::mul(grads[i], g.constant(us[i]))));
            return total;
        };
        double worst = 0.0;
        for (int k = 0; k < kPoints; ++k) worst = std::max(worst, gradient_error(outer, draw_inputs(p, rng)));
        EXPECT_LT(worst, 1e-3) << p.name;
    }
}

TEST(Autodiff, ReplayRecomputesForwardValues)
{
    Rng rng(3);
    ad::Graph g;
    const ad::Var x = g.leaf(random_tensor({2, 3}, rng), true);
    const ad::Var w = g.leaf(random_tensor({3, 2}, rng), true);
    const ad::Var y = ad::mean(ad::tanh(ad::matmul(x, w)));
    const auto values = g.replay();
    ASSERT_EQ(values.size(), g.size());
    EXPECT_TRUE(values[static_cast<std::size_t>(y.id)].identical(y.value()));
}

TEST(Autodiff, ShapeMismatchIsRejected)
{
    ad::Graph g;
    const ad::Var a = g.constant(Tensor({2, 3}));
    const ad::Var b = g.constant(Tensor({3, 2}));
    EXPECT_THROW(ad::add(a, b), std::invalid_argument);
    EXPECT_THROW(ad::matmul(a, a), std::invalid_argument);
}

TEST(Autodiff, UnrelatedLeafGetsZeroGradient)
{
    ad::Graph g;
    const ad::Var x = g.leaf(Tensor::vector({1.0, 2.0}), true);
    const ad::Var unused = g.leaf(Tensor::vector({5.0}), true);
    const ad::GradMap grads = g.backward(ad::sum(ad::square(x)));
    EXPECT_EQ(grads.at(unused)[0], 0.0);
    EXPECT_EQ(grads.at(x)[1], 4.0);
}

namespace {

Mlp small_critic(Rng& rng)
{
    return Mlp(MlpSpec{{3, 6, 5, 1}, Activation::LeakyRelu, Activation::Identity, 0.2}, rng);
}

} // namespace

TEST(Autodiff, ExactInputGradientNormMatchesFiniteDifferences)
{
    Rng rng(5);
    for (int k = 0; k < kPoints; ++k) {
        const Mlp critic = small_critic(rng);
        const Tensor x = random_tensor({4, 3}, rng);
        ad::Graph g;
        const auto p = critic.bind(g, false);
        const ad::Var norm =
            ad::input_gradient_norm(g, [&](ad::Var in) { return critic.forward(g, in, p); }, x, {});
        for (std::size_t r = 0; r < 4; ++r) {
            double sq = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                Tensor up = x, down = x;
                up.at(r, c) += 1e-6;
                down.at(r, c) -= 1e-6;
                const double d = (critic.predict(up).at(r, 0) - critic.predict(down).at(r, 0)) / 2e-6;
                sq += d * d;
            }
            EXPECT_LT(relative_error(norm.value().at(r, 0), std::sqrt(sq)), 1e-4);
        }
    }
}

TEST(Autodiff, PenaltyPathParameterGradientMatchesFiniteDifferences)
{
    Rng rng(9);
    double worst = 0.0;
    for (int k = 0; k < kPoints; ++k) {
        Mlp critic = small_critic(rng);
        const Tensor x = random_tensor({4, 3}, rng);
        worst = std::max(worst, parameter_gradient_error(critic, [&](ad::Graph& g, std::span<const ad::Var> p) {
            const ad::Var norm =
                ad::input_gradient_norm(g, [&](ad::Var in) { return critic.forward(g, in, p); }, x, {});
            return ad::mean(ad::scale(ad::square(ad::add_scalar(norm, -1.0)), 10.0));
        }));
    }
    EXPECT_LT(worst, 1e-3);
}

TEST(Autodiff, LinearCriticPenaltyIsExact)
{
    // D(x) = w.x: the input gradient is w everywhere.
    ad::Graph g;
    const ad::Var w = g.constant(Tensor::matrix(3, 1, {2.0, -1.0, 2.0}));
    const Tensor x = Tensor::matrix(2, 3, {0.1, 0.2, 0.3, -1.0, 4.0, 0.5});
    const ad::Var norm = ad::input_gradient_norm(g, [&](ad::Var in) { return ad::matmul(in, w); }, x, {});
    EXPECT_DOUBLE_EQ(norm.value().at(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(norm.value().at(1, 0), 3.0);
}

TEST(Autodiff, RandomDirectionEstimatesSquaredNormWithoutBias)
{
    Rng rng(13);
    const Mlp critic = small_critic(rng);
    const Tensor x = random_tensor({1, 3}, rng);
    ad::Graph g;
    const auto p = critic.bind(g, false);
    const ad::RowFunction f = [&](ad::Var in) { return critic.forward(g, in, p); };
    const double exact = ad::input_gradient_norm(g, f, x, {}).value().item();
    ad::GradNormOptions opt{ad::PenaltyMode::RandomDirection, 1e-5};
    double mean_sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double e = ad::input_gradient_norm(g, f, x, opt, &rng).value().item();
        mean_sq += e * e / n;
    }
    EXPECT_NEAR(mean_sq, exact * exact, 0.03 * exact * exact);
}

TEST(Autodiff, RandomDirectionNeedsGenerator)
{
    ad::Graph g;
    const Tensor x({1, 2}, 1.0);
    const ad::RowFunction f = [](ad::Var in) { return ad::row_sum(in); };
    EXPECT_THROW(ad::input_gradient_norm(g, f, x, {ad::PenaltyMode::RandomDirection, 1e-3}, nullptr),
                 std::invalid_argument);
}
