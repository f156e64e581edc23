#include "grimrepr/evaluation.hpp"
#include "grimrepr/short_term.hpp"
#include "grimrepr/toyworlds.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace grimrepr;

namespace {

std::vector<double> last_frame(const TaskSpec& t, const Observation& o)
{
    return {o.end() - static_cast<std::ptrdiff_t>(t.frame_size()), o.end()};
}

QFunction constant_policy(std::size_t action, std::size_t actions)
{
    return [=](const Tensor& x) {
        Tensor q({x.rows(), actions});
        for (std::size_t r = 0; r < x.rows(); ++r) q.at(r, action) = 1.0;
        return q;
    };
}

} // namespace

TEST(Toyworlds, ResetIsDeterministicPerSeed)
{
    for (TaskId id : {TaskId::A, TaskId::B}) {
        const TaskSpec t = TaskSpec::make(id);
        EXPECT_EQ(reset(t, 3).observation, reset(t, 3).observation);
        EXPECT_EQ(reset(t, 3).observation.size(), t.observation_size());
    }
}

TEST(Toyworlds, LayoutsDifferBetweenTasks)
{
    const TaskSpec a = TaskSpec::make(TaskId::A, 1);
    const TaskSpec b = TaskSpec::make(TaskId::B, 1);
    const auto fa = last_frame(a, reset(a, 1).observation);
    const auto fb = last_frame(b, reset(b, 1).observation);
    // Paddle starts at column 3 on the bottom (A) or top (B) row.
    EXPECT_EQ(fa[7 * 8 + 3], 1.0);
    EXPECT_EQ(fb[0 * 8 + 3], 0.5);
    double ball_a = 0.0, ball_b = 0.0;
    for (std::size_t c = 0; c < 8; ++c) {
        ball_a += fa[c];
        ball_b += fb[7 * 8 + c];
    }
    EXPECT_EQ(ball_a, 1.0);
    EXPECT_EQ(ball_b, -1.0);
    EXPECT_EQ(a.reward_scale, 1.0);
    EXPECT_EQ(b.reward_scale, 9.0);
}

TEST(Toyworlds, ActionsMoveThePaddleWithinTheGrid)
{
    const TaskSpec t = TaskSpec::make(TaskId::A);
    EnvState s = reset(t, 2).state;
    for (int i = 0; i < 10; ++i) s = step(t, s, 0).state;
    EXPECT_EQ(s.paddle, 0);
    s = step(t, s, 2).state;
    EXPECT_EQ(s.paddle, 1);
    s = step(t, s, 1).state;
    EXPECT_EQ(s.paddle, 1);
    EXPECT_THROW(step(t, s, 3), std::out_of_range);
}

TEST(Toyworlds, FrameStackShiftsOldestOut)
{
    const TaskSpec t = TaskSpec::make(TaskId::A, 2);
    const auto r0 = reset(t, 4);
    const auto r1 = step(t, r0.state, 2);
    const auto fs = static_cast<std::ptrdiff_t>(t.frame_size());
    EXPECT_TRUE(std::equal(r1.observation.begin(), r1.observation.begin() + fs, r0.observation.begin() + fs));
}

TEST(Toyworlds, OracleCatchesEveryBall)
{
    for (TaskId id : {TaskId::A, TaskId::B}) {
        const TaskSpec t = TaskSpec::make(id);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            EnvState s = reset(t, seed).state;
            double total = 0.0;
            while (!s.terminal) {
                auto r = step(t, s, oracle_action(t, s));
                total += r.reward;
                s = std::move(r.state);
            }
            EXPECT_EQ(s.step, t.max_steps);
            EXPECT_EQ(total, static_cast<double>(t.landings_per_episode()) * t.reward_scale);
        }
    }
}

TEST(Toyworlds, EpisodeEndsAfterLivesAreLost)
{
    // Standing still at column 3 misses most balls; three misses end the episode early.
    const TaskSpec t = TaskSpec::make(TaskId::B);
    EnvState s = reset(t, 9).state;
    double total = 0.0;
    while (!s.terminal) {
        auto r = step(t, s, 1);
        total += r.reward;
        s = std::move(r.state);
    }
    EXPECT_EQ(s.misses, t.lives);
    EXPECT_LT(s.step, t.max_steps);
    EXPECT_THROW(step(t, s, 1), std::logic_error);
    EXPECT_LT(total, 0.0);
}

TEST(Toyworlds, ObservationOracleAgreesWithStateOracle)
{
    for (TaskId id : {TaskId::A, TaskId::B}) {
        const TaskSpec t = TaskSpec::make(id);
        auto r = reset(t, 5);
        EnvState s = r.state;
        Observation o = r.observation;
        Rng rng(1);
        for (int i = 0; i < 200 && !s.terminal; ++i) {
            const auto q = oracle_q(t, o);
            EXPECT_EQ(q[oracle_action(t, s)], 1.0);
            auto n = step(t, s, rng.index(3));
            s = std::move(n.state);
            o = std::move(n.observation);
        }
    }
}

TEST(Evaluation, GreedyOracleReachesTheCeilingExactly)
{
    for (TaskId id : {TaskId::A, TaskId::B}) {
        const TaskSpec t = TaskSpec::make(id);
        const EvalResult r = policy_ceiling(t, 0.0, 30, 1);
        EXPECT_EQ(r.mean, 14.0 * t.reward_scale);
        EXPECT_EQ(r.std, 0.0);
        EXPECT_EQ(r.returns.size(), 30u);
    }
}

TEST(Evaluation, ExplorationCostsTheOracleLittle)
{
    const TaskSpec t = TaskSpec::make(TaskId::A);
    const EvalResult r = policy_ceiling(t, 0.05, 30, 1);
    EXPECT_LE(r.mean, 14.0);
    EXPECT_GT(r.mean, 10.0);
}

TEST(Evaluation, FixedPolicyScoresFarBelowTheCeiling)
{
    for (TaskId id : {TaskId::A, TaskId::B}) {
        const TaskSpec t = TaskSpec::make(id);
        const EvalResult r = evaluate_task(constant_policy(1, 3), t, 30, 0.0, 2);
        EXPECT_LT(r.mean, 0.0);
        const double mean = std::accumulate(r.returns.begin(), r.returns.end(), 0.0) / 30.0;
        EXPECT_NEAR(r.mean, mean, 1e-12);
    }
}

TEST(Evaluation, EpisodesDoNotDependOnBatching)
{
    const TaskSpec t = TaskSpec::make(TaskId::A);
    const EvalResult five = evaluate_task(oracle_policy(t), t, 5, 0.3, 7);
    const EvalResult three = evaluate_task(oracle_policy(t), t, 3, 0.3, 7);
    for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(five.returns[e], three.returns[e]);
    EXPECT_EQ(five.returns, evaluate_task(oracle_policy(t), t, 5, 0.3, 7).returns);
}

TEST(Evaluation, RejectsWrongQShape)
{
    const TaskSpec t = TaskSpec::make(TaskId::A);
    EXPECT_THROW(evaluate_task(constant_policy(0, 2), t, 2, 0.0, 1), std::exception);
    EXPECT_THROW(evaluate_task(oracle_policy(t), t, 0, 0.0, 1), std::invalid_argument);
}

TEST(Evaluation, OracleScoreFallsInsideTheCeilingInterval)
{
    for (TaskId id : {TaskId::A, TaskId::B}) {
        const TaskSpec t = TaskSpec::make(id);
        const EvalResult ceiling = policy_ceiling(t, 0.05, 3000, 1);
        const EvalResult run = evaluate_task(oracle_policy(t), t, 30, 0.05, 2);
        EXPECT_LE(std::abs(run.mean - ceiling.mean), 3.0 * ceiling.std / std::sqrt(30.0)) << to_string(id);
    }
}

TEST(Evaluation, GreedyNetworkIsRepeatable)
{
    const TaskSpec t = TaskSpec::make(TaskId::A);
    Rng rng(3);
    const QNetwork net = make_qnetwork(t.observation_size(), {16}, 3, rng);
    std::vector<double> means;
    for (int i = 0; i < 5; ++i) means.push_back(evaluate({net}, {t}, 30, 0.0, 4)[0].mean);
    double sq = 0.0;
    for (double m : means) sq += (m - means[0]) * (m - means[0]);
    EXPECT_EQ(sq, 0.0);
}

TEST(Evaluation, UntrainedNetworksScoreLikeRandomPlay)
{
    // Band: the uniform-random policy's mean, widened by a tenth of the gap
    // to the ceiling.
    for (TaskId id : {TaskId::A, TaskId::B}) {
        const TaskSpec t = TaskSpec::make(id);
        const double random = evaluate_task(oracle_policy(t), t, 3000, 1.0, 1).mean;
        const double ceiling = policy_ceiling(t, 0.05, 3000, 1).mean;
        const double half_width = 0.1 * (ceiling - random);
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            Rng rng(seed);
            const QNetwork net = make_qnetwork(t.observation_size(), {128, 128, 64}, 3, rng);
            EXPECT_NEAR(evaluate(net, {t}, 30, 0.05, seed)[0].mean, random, half_width) << to_string(id) << seed;
        }
    }
}

TEST(Evaluation, BestCheckpointSelection)
{
    EXPECT_EQ(select_best_checkpoint(std::vector<double>{1, 5, 3}, Criterion::MaxReward), 1u);
    EXPECT_EQ(select_best_checkpoint(std::vector<double>{0.2, 0.1, 0.1}, Criterion::MinLoss), 1u);
    EXPECT_EQ(select_best_checkpoint(std::vector<double>{4.0}, Criterion::MinLoss), 0u);
    EXPECT_EQ(select_best_checkpoint(std::vector<double>{3, 3}, Criterion::MaxReward), 0u);
    EXPECT_THROW(select_best_checkpoint(std::vector<double>{}, Criterion::MaxReward), std::invalid_argument);
}
