#pragma once

#include "grimrepr/mlp.hpp"
#include "grimrepr/toyworlds.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace grimrepr {

/// Anything that maps a batch of observations [n, obs] to Q-values [n, actions].
using QFunction = std::function<Tensor(const Tensor&)>;

struct EvalResult {
    double mean = 0.0;
    double std = 0.0; // population standard deviation over episodes
    std::vector<double> returns;
};

/// Epsilon-greedy rollouts of `episodes` episodes. Episode e uses its own
/// environment seed and exploration stream derived from (seed, e), so results
/// do not depend on how episodes are batched.
EvalResult evaluate_task(const QFunction& q, const TaskSpec& task, std::size_t episodes, double epsilon,
                         std::uint64_t seed);

std::vector<EvalResult> evaluate(const Mlp& net, const std::vector<TaskSpec>& tasks, std::size_t episodes,
                                 double epsilon, std::uint64_t seed);

/// The hand-coded policy as a QFunction.
QFunction oracle_policy(const TaskSpec& task);

/// Mean episode reward of the hand-coded policy under the evaluation protocol.
EvalResult policy_ceiling(const TaskSpec& task, double epsilon, std::size_t episodes, std::uint64_t seed);

} // namespace grimrepr

namespace grimrepr {

enum class Criterion : std::uint8_t { MaxReward, MinLoss };

/// Index of the best entry; ties go to the earliest. Throws on an empty history.
std::size_t select_best_checkpoint(std::span<const double> history, Criterion criterion);

} // namespace grimrepr
