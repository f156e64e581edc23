#include "grimrepr/checkpoint.hpp"
#include "grimrepr/mlp.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace grimrepr;
using namespace grimrepr::testing;

namespace {

MlpSpec spec(Activation out = Activation::Identity)
{
    return MlpSpec{{5, 7, 6, 3}, Activation::LeakyRelu, out, 0.01};
}

std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("grimrepr_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST(Mlp, PredictMatchesGraphForwardBitForBit)
{
    Rng rng(1);
    for (Activation out : {Activation::Identity, Activation::Tanh}) {
        const Mlp net(spec(out), rng);
        const Tensor x = random_tensor({9, 5}, rng);
        ad::Graph g;
        const auto p = net.bind(g, false);
        EXPECT_TRUE(net.predict(x).identical(net.forward(g, g.constant(x), p).value()));
    }
}

TEST(Mlp, ForwardMatchesStraightLineReference)
{
    Rng rng(2);
    const Mlp net(spec(Activation::Tanh), rng);
    const Tensor x = random_tensor({4, 5}, rng);
    const Tensor y = net.predict(x);
    const Tensor h2 = net.activations(x, 2);
    for (std::size_t r = 0; r < 4; ++r) {
        const std::vector<double> row(x.row(r).begin(), x.row(r).end());
        const auto want = reference_forward(net, row, 3);
        const auto want_h2 = reference_forward(net, row, 2);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y.at(r, c), want[c], 1e-12);
        for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(h2.at(r, c), want_h2[c], 1e-12);
    }
}

TEST(Mlp, ParameterGradientsMatchFiniteDifferences)
{
    Rng rng(3);
    Mlp net(spec(Activation::Tanh), rng);
    const Tensor x = random_tensor({4, 5}, rng);
    const double err = parameter_gradient_error(net, [&](ad::Graph& g, std::span<const ad::Var> p) {
        return ad::mean(ad::square(net.forward(g, g.constant(x), p)));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Mlp, InitialisationIsSeededAndBiasesStartAtZero)
{
    Rng a(4), b(4), c(5);
    const Mlp x(spec(), a), y(spec(), b), z(spec(), c);
    EXPECT_TRUE(x.identical(y));
    EXPECT_FALSE(x.identical(z));
    EXPECT_NE(x.fingerprint(), z.fingerprint());
    for (std::size_t l = 0; l < x.layer_count(); ++l)
        for (double v : x.params()[2 * l + 1].data()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(x.parameter_count(), 5u * 7 + 7 + 7 * 6 + 6 + 6 * 3 + 3);
}

TEST(Optimizer, SgdMomentumFollowsHandComputedSteps)
{
    Optimizer opt({OptimizerKind::Sgd, 0.1, 0.9});
    std::vector<Tensor> p{Tensor::vector({1.0})};
    opt.step(p, {Tensor::vector({2.0})});
    EXPECT_DOUBLE_EQ(p[0][0], 0.8);
    opt.step(p, {Tensor::vector({4.0})});
    // m = 0.9 * 2 + 4 = 5.8
    EXPECT_DOUBLE_EQ(p[0][0], 0.8 - 0.1 * 5.8);
}

TEST(Optimizer, AdamFirstStepHasMagnitudeLr)
{
    Optimizer opt({OptimizerKind::Adam, 0.01, 0.0, 0.9, 0.999, 1e-8});
    std::vector<Tensor> p{Tensor::vector({0.0, 0.0})};
    opt.step(p, {Tensor::vector({3.0, -0.5})});
    EXPECT_NEAR(p[0][0], -0.01, 1e-9);
    EXPECT_NEAR(p[0][1], 0.01, 1e-9);
    // Second step with g = 1: m = 0.9*0.3 + 0.1, v = 0.999*0.009 + 0.001.
    const double before = p[0][0];
    opt.step(p, {Tensor::vector({1.0, 1.0})});
    const double m = (0.9 * 0.3 + 0.1) / (1 - 0.81);
    const double v = (0.999 * 0.009 + 0.001) / (1 - 0.999 * 0.999);
    EXPECT_NEAR(p[0][0], before - 0.01 * m / (std::sqrt(v) + 1e-8), 1e-12);
}

TEST(Optimizer, ClipScalesTheGlobalNorm)
{
    Optimizer opt({OptimizerKind::Sgd, 1.0, 0.0, 0.9, 0.999, 1e-8, 1.0});
    std::vector<Tensor> p{Tensor::vector({0.0}), Tensor::vector({0.0})};
    opt.step(p, {Tensor::vector({3.0}), Tensor::vector({4.0})});
    EXPECT_DOUBLE_EQ(p[0][0], -0.6);
    EXPECT_DOUBLE_EQ(p[1][0], -0.8);
}

TEST(Checkpoint, NetworkRoundTripIsExact)
{
    const auto dir = scratch_dir("ckpt");
    Rng rng(6);
    const Mlp net(spec(Activation::Tanh), rng);
    Checkpoint c;
    c.kind = "test";
    c.set_real("x", 0.1);
    add_network(c, "net", net);
    save_checkpoint(c, dir / "a");
    const Checkpoint back = load_checkpoint(dir / "a");
    EXPECT_EQ(back.kind, "test");
    EXPECT_EQ(back.require_real("x"), 0.1);
    const Mlp again = read_network(back, "net");
    EXPECT_TRUE(again.identical(net));
    EXPECT_EQ(again.spec(), net.spec());
}

TEST(Checkpoint, RefusesToOverwriteUnlessAsked)
{
    const auto dir = scratch_dir("overwrite");
    Checkpoint c;
    c.kind = "k";
    save_checkpoint(c, dir / "a");
    EXPECT_THROW(save_checkpoint(c, dir / "a"), std::exception);
    EXPECT_NO_THROW(save_checkpoint(c, dir / "a", true));
}

TEST(Checkpoint, RealsRoundTripExactly)
{
    for (double v : {0.1, -1e-300, 1.0 / 3.0, 6.02214076e23}) EXPECT_EQ(parse_real(format_real(v)), v);
}
