#include "grimrepr/evaluation.hpp"
#include "grimrepr/long_term.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace grimrepr;
using namespace grimrepr::testing;

namespace {

ReplayBuffer filled_replay(std::size_t n, std::size_t obs, Rng& rng)
{
    ReplayBuffer r(n, obs, 3);
    for (std::size_t i = 0; i < n; ++i) {
        Observation s(obs), s2(obs);
        for (double& v : s) v = rng.uniform(-1, 1);
        for (double& v : s2) v = rng.uniform(-1, 1);
        r.push({s, i % 3, 0.0, s2, false});
    }
    return r;
}

double sq_rows(const Tensor& a, const Tensor& b)
{
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
    return total / static_cast<double>(a.rows());
}

} // namespace

TEST(LongTerm, NormalizedValuesHaveZeroMeanUnitStd)
{
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const double shift = rng.uniform(-50, 50), spread = rng.uniform(0.1, 30);
        std::vector<double> q(3000);
        for (double& v : q) v = shift + spread * rng.normal();
        const auto z = normalize_q(q, pooled_stats(q));
        const NormStats after = pooled_stats(z);
        EXPECT_NEAR(after.mu, 0.0, 1e-9);
        EXPECT_NEAR(after.sigma, 1.0, 1e-9);
    }
}

TEST(LongTerm, NormalizationPreservesGreedyActions)
{
    Rng rng(2);
    std::vector<double> q(10000 * 3);
    for (double& v : q) v = rng.uniform(-9, 9);
    const auto z = normalize_q(q, pooled_stats(q));
    for (std::size_t i = 0; i < 10000; ++i)
        EXPECT_EQ(argmax(std::span<const double>(q).subspan(3 * i, 3)),
                  argmax(std::span<const double>(z).subspan(3 * i, 3)));
}

TEST(LongTerm, ConstantValuesUseSigmaFloor)
{
    const std::vector<double> q(10, 4.0);
    const NormStats s = pooled_stats(q);
    EXPECT_EQ(s.mu, 4.0);
    EXPECT_EQ(s.sigma, kSigmaFloor);
}

TEST(LongTerm, NormStatsPoolEveryQValueOverTheBatches)
{
    Rng rng(3);
    const QNetwork stm = make_qnetwork(4, {8}, 3, rng);
    const ReplayBuffer replay = filled_replay(50, 4, rng);
    Rng draw(9), same(9);
    const NormStats s = estimate_norm_stats(stm, replay, 1000, 32, draw);
    EXPECT_EQ(s.n_batches, 1000u);
    // Independent recomputation with the same index stream.
    std::vector<double> pooled;
    for (std::size_t b = 0; b < 1000; ++b) {
        std::vector<std::size_t> idx(32);
        for (auto& i : idx) i = same.index(50);
        const Tensor q = stm.predict(replay.states(idx));
        pooled.insert(pooled.end(), q.data().begin(), q.data().end());
    }
    double mu = 0.0;
    for (double v : pooled) mu += v / static_cast<double>(pooled.size());
    double var = 0.0;
    for (double v : pooled) var += (v - mu) * (v - mu) / static_cast<double>(pooled.size());
    EXPECT_NEAR(s.mu, mu, 1e-12);
    EXPECT_NEAR(s.sigma, std::sqrt(var), 1e-12);
}

TEST(LongTerm, LossesMatchDirectFormulas)
{
    Rng rng(4);
    const QNetwork student = make_qnetwork(4, {8}, 3, rng);
    const QNetwork teacher = make_qnetwork(4, {8}, 3, rng);
    const Tensor states = random_tensor({6, 4}, rng);
    const NormStats stats{0.3, 2.0, 1};
    const Tensor q = student.predict(states);
    const Tensor t = teacher.predict(states);

    ad::Graph g;
    const auto p = student.bind(g, false);
    EXPECT_NEAR(distill_loss(g, states, student, p, teacher).value().item(), sq_rows(q, t), 1e-12);
    EXPECT_NEAR(distill_loss(g, states, student, p, teacher, &stats).value().item(),
                sq_rows(q, normalize_q(t, stats)), 1e-12);
    const PseudoItems items = label_pseudo_items(states, teacher);
    const ad::Var d = distill_loss(g, states, student, p, teacher, &stats);
    const ad::Var r = pr_loss(g, items, student, p);
    EXPECT_NEAR(r.value().item(), sq_rows(q, t), 1e-12);
    EXPECT_NEAR(ltm_loss(d, r, 0.5).value().item(), 0.5 * d.value().item() + 0.5 * r.value().item(), 1e-12);
    EXPECT_THROW(ltm_loss(d, r, 1.5), std::invalid_argument);
    EXPECT_THROW(ltm_loss(d, r, -0.1), std::invalid_argument);
}

TEST(LongTerm, LossGradientsMatchFiniteDifferences)
{
    Rng rng(5);
    double distill = 0.0, pr = 0.0, total = 0.0;
    for (int k = 0; k < 100; ++k) {
        QNetwork student = make_qnetwork(4, {6, 5}, 3, rng);
        const QNetwork teacher = make_qnetwork(4, {6, 5}, 3, rng);
        const Tensor states = random_tensor({5, 4}, rng);
        const PseudoItems items = label_pseudo_items(random_tensor({5, 4}, rng), teacher);
        const NormStats stats{rng.uniform(-1, 1), rng.uniform(0.5, 2), 1};
        distill = std::max(distill, parameter_gradient_error(student, [&](ad::Graph& g, std::span<const ad::Var> p) {
            return distill_loss(g, states, student, p, teacher, &stats);
        }));
        pr = std::max(pr, parameter_gradient_error(student, [&](ad::Graph& g, std::span<const ad::Var> p) {
            return pr_loss(g, items, student, p);
        }));
        total = std::max(total, parameter_gradient_error(student, [&](ad::Graph& g, std::span<const ad::Var> p) {
            return ltm_loss(distill_loss(g, states, student, p, teacher), pr_loss(g, items, student, p), 0.5);
        }));
    }
    EXPECT_LT(distill, 1e-4);
    EXPECT_LT(pr, 1e-4);
    EXPECT_LT(total, 1e-4);
}

TEST(LongTerm, MismatchedShapesAreRejected)
{
    Rng rng(6);
    const QNetwork student = make_qnetwork(4, {8}, 3, rng);
    const QNetwork other = make_qnetwork(4, {8}, 2, rng);
    ad::Graph g;
    const auto p = student.bind(g, false);
    EXPECT_THROW(distill_loss(g, random_tensor({2, 4}, rng), student, p, other), std::invalid_argument);
    EXPECT_THROW(pr_loss(g, label_pseudo_items(random_tensor({2, 4}, rng), other), student, p),
                 std::invalid_argument);
}

TEST(LongTerm, FirstTaskWithoutNormalizationCopiesTheStm)
{
    Rng rng(7);
    const QNetwork stm = make_qnetwork(4, {8}, 3, rng);
    const ReplayBuffer replay = filled_replay(20, 4, rng);
    const LtmResult r = train_ltm(1, nullptr, stm, replay, nullptr, LtmConfig{}, 1);
    EXPECT_TRUE(r.network.identical(stm));
    EXPECT_FALSE(r.stats.has_value());
}

TEST(LongTerm, LaterTasksNeedPreviousNetworkAndSampler)
{
    Rng rng(8);
    const QNetwork stm = make_qnetwork(4, {8}, 3, rng);
    const ReplayBuffer replay = filled_replay(20, 4, rng);
    EXPECT_THROW(train_ltm(2, nullptr, stm, replay, nullptr, LtmConfig{}, 1), std::invalid_argument);
    EXPECT_THROW(train_ltm(0, nullptr, stm, replay, nullptr, LtmConfig{}, 1), std::invalid_argument);
}

TEST(LongTerm, RehearsalTrainingIsDeterministicAndLowersLoss)
{
    Rng rng(9);
    const QNetwork prev = make_qnetwork(4, {16}, 3, rng);
    const QNetwork stm = make_qnetwork(4, {16}, 3, rng);
    const ReplayBuffer replay = filled_replay(200, 4, rng);
    const StateSampler pseudo = [](std::size_t n, Rng& r) { return random_tensor({n, 4}, r); };
    LtmConfig c;
    c.steps = 600;
    c.eval_interval = 100;
    c.normalize = true;
    c.norm_batches = 50;
    c.optimizer.lr = 1e-3;
    std::size_t calls = 0;
    const LtmResult a = train_ltm(2, &prev, stm, replay, &pseudo, c, 5, [&](const LtmEvalPoint&, const QNetwork&) {
        ++calls;
    });
    const LtmResult b = train_ltm(2, &prev, stm, replay, &pseudo, c, 5);
    EXPECT_EQ(calls, 6u);
    EXPECT_TRUE(a.network.identical(b.network));
    ASSERT_TRUE(a.stats.has_value());
    EXPECT_EQ(a.stats->n_batches, 50u);
    EXPECT_LT(a.history.back().mean_loss, a.history.front().mean_loss);
    std::vector<double> losses;
    for (const auto& p : a.history) losses.push_back(p.mean_loss);
    EXPECT_EQ(a.best_index, select_best_checkpoint(losses, Criterion::MinLoss));
}
