#include "grimrepr/evaluation.hpp"

#include "grimrepr/short_term.hpp"

#include <cmath>
#include <stdexcept>

namespace grimrepr {

namespace {
constexpr std::uint64_t kEvalStream = 0xE7A15EEDULL;
}

EvalResult evaluate_task(const QFunction& q, const TaskSpec& task, std::size_t episodes, double epsilon,
                         std::uint64_t seed)
{
    if (episodes == 0) throw std::invalid_argument("evaluate: episodes must be >= 1");
    std::vector<EnvState> states;
    std::vector<Observation> obs;
    std::vector<Rng> explore;
    std::vector<double> returns(episodes, 0.0);
    for (std::size_t e = 0; e < episodes; ++e) {
        const std::uint64_t episode_seed = mix_seed(seed ^ kEvalStream, e);
        ResetResult r = reset(task, episode_seed);
        states.push_back(std::move(r.state));
        obs.push_back(std::move(r.observation));
        explore.emplace_back(mix_seed(episode_seed, 1));
    }

    std::vector<std::size_t> live(episodes);
    for (std::size_t e = 0; e < episodes; ++e) live[e] = e;
    while (!live.empty()) {
        Tensor batch({live.size(), task.observation_size()});
        for (std::size_t i = 0; i < live.size(); ++i) {
            const Observation& o = obs[live[i]];
            std::copy(o.begin(), o.end(), batch.row(i).begin());
        }
        const Tensor values = q(batch);
        if (values.rows() != live.size() || values.cols() != task.action_count)
            throw std::invalid_argument("evaluate: Q-function output shape " + shape_string(values.shape()) +
                                        " does not match the task");
        std::vector<std::size_t> still;
        for (std::size_t i = 0; i < live.size(); ++i) {
            const std::size_t e = live[i];
            const std::size_t a = select_action(values.row(i), epsilon, explore[e]);
            StepResult s = step(task, states[e], a);
            returns[e] += s.reward;
            states[e] = std::move(s.state);
            obs[e] = std::move(s.observation);
            if (!s.terminal) still.push_back(e);
        }
        live = std::move(still);
    }

    EvalResult result;
    double sum = 0.0;
    for (double r : returns) sum += r;
    result.mean = sum / static_cast<double>(episodes);
    double var = 0.0;
    for (double r : returns) var += (r - result.mean) * (r - result.mean);
    result.std = std::sqrt(var / static_cast<double>(episodes));
    result.returns = std::move(returns);
    return result;
}

std::vector<EvalResult> evaluate(const Mlp& net, const std::vector<TaskSpec>& tasks, std::size_t episodes,
                                 double epsilon, std::uint64_t seed)
{
    std::vector<EvalResult> out;
    const QFunction q = [&net](const Tensor& x) { return net.predict(x); };
    for (const TaskSpec& task : tasks) {
        if (net.output_dim() != task.action_count || net.input_dim() != task.observation_size())
            throw std::invalid_argument("evaluate: network does not match task " + to_string(task.id));
        out.push_back(evaluate_task(q, task, episodes, epsilon, mix_seed(seed, static_cast<std::uint64_t>(task.id))));
    }
    return out;
}

QFunction oracle_policy(const TaskSpec& task)
{
    return [task](const Tensor& x) {
        Tensor out({x.rows(), task.action_count});
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto q = oracle_q(task, x.row(r));
            std::copy(q.begin(), q.end(), out.row(r).begin());
        }
        return out;
    };
}

EvalResult policy_ceiling(const TaskSpec& task, double epsilon, std::size_t episodes, std::uint64_t seed)
{
    return evaluate_task(oracle_policy(task), task, episodes, epsilon, seed);
}

} // namespace grimrepr

namespace grimrepr {

std::size_t select_best_checkpoint(std::span<const double> history, Criterion criterion)
{
    if (history.empty()) throw std::invalid_argument("select_best_checkpoint: empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
        const bool better = criterion == Criterion::MaxReward ? history[i] > history[best] : history[i] < history[best];
        if (better) best = i;
    }
    return best;
}

} // namespace grimrepr
