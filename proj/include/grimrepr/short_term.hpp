#pragma once

#include "grimrepr/autodiff.hpp"
#include "grimrepr/checkpoint.hpp"
#include "grimrepr/mlp.hpp"
#include "grimrepr/rng.hpp"
#include "grimrepr/toyworlds.hpp"

#include <functional>
#include <span>
#include <vector>

// Short-term memory: Deep Q-learning with experience replay and a target
// network.

namespace grimrepr {

/// Q-network: leaky-rectifier hidden layers, linear action-value head.
using QNetwork = Mlp;

QNetwork make_qnetwork(std::size_t observation_size, const std::vector<std::size_t>& hidden, std::size_t actions,
                       Rng& rng, double slope = 0.01);

struct Transition {
    Observation s;
    std::size_t a = 0;
    double r = 0.0;
    Observation s_next;
    bool terminal = false;
};

struct TransitionBatch {
    Tensor states;
    std::vector<std::size_t> actions;
    std::vector<double> rewards;
    Tensor next_states;
    std::vector<bool> terminals;

    std::size_t size() const { return actions.size(); }
};

/// Bounded ring of transitions with uniform sampling (with replacement).
class ReplayBuffer {
public:
    ReplayBuffer() = default;
    ReplayBuffer(std::size_t capacity, std::size_t observation_size, std::uint64_t seed);

    void push(const Transition& t);
    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t observation_size() const { return obs_size_; }
    bool empty() const { return size_ == 0; }

    /// i-th stored transition in insertion order (oldest first).
    Transition at(std::size_t i) const;

    std::vector<std::size_t> sample_indices(std::size_t n);
    TransitionBatch sample(std::size_t n);
    /// States only, [n, observation_size].
    Tensor sample_states(std::size_t n);
    Tensor states(std::span<const std::size_t> indices) const;
    /// Every stored state, oldest first.
    Tensor all_states() const;

    Rng& rng() { return rng_; }

    Checkpoint to_checkpoint() const;
    static ReplayBuffer from_checkpoint(const Checkpoint& ckpt);

private:
    std::size_t slot(std::size_t i) const;

    std::size_t capacity_ = 0;
    std::size_t obs_size_ = 0;
    std::size_t head_ = 0; // next write slot
    std::size_t size_ = 0;
    std::vector<double> states_;
    std::vector<double> next_states_;
    std::vector<std::size_t> actions_;
    std::vector<double> rewards_;
    std::vector<char> terminals_;
    Rng rng_;
};

/// r if terminal, else r + gamma * max_a Q(s_next, a; target).
double td_target(double r, std::span<const double> s_next, bool terminal, double gamma, const QNetwork& target);
std::vector<double> td_targets(const TransitionBatch& batch, double gamma, const QNetwork& target);

/// mean_j (y_j - q[j, a_j])^2 with y held constant. `q` is [B, actions].
ad::Var dqn_loss_from_q(ad::Var q, std::span<const std::size_t> actions, std::span<const double> targets);

/// Deep Q-learning loss of `predictor` (bound as `predictor_params`) on `batch`.
ad::Var dqn_loss(ad::Graph& graph, const TransitionBatch& batch, const QNetwork& predictor,
                 std::span<const ad::Var> predictor_params, const QNetwork& target, double gamma);

/// One optimizer step of `net` on the Q-learning loss of `batch`; returns the
/// loss before the step. Throws TrainingAborted("stm", step) when the loss or
/// a gradient is not finite.
double dqn_update(QNetwork& net, const QNetwork& target, Optimizer& opt, const TransitionBatch& batch, double gamma,
                  std::size_t step);

/// Lowest index among maximal entries.
std::size_t argmax(std::span<const double> q);

/// Greedy with probability 1 - epsilon, otherwise uniform over actions.
std::size_t select_action(std::span<const double> q, double epsilon, Rng& rng);

struct StmConfig {
    std::vector<std::size_t> hidden{128, 128, 64};
    double slope = 0.01;
    std::size_t frames = 100000;
    std::size_t replay_capacity = 20000;
    std::size_t batch_size = 32;
    std::size_t learning_starts = 1000;
    std::size_t update_every = 4;
    std::size_t sync_interval = 2000; // frames between target-network copies
    double gamma = 0.99;
    OptimizerConfig optimizer{OptimizerKind::Sgd, 1e-2, 0.9, 0.9, 0.999, 1e-8, 10.0};
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double anneal_fraction = 0.1;
    std::size_t eval_interval = 10000;
    std::size_t eval_episodes = 30;
    double eval_epsilon = 0.05;
};

/// Exploration rate at `frame` (1-based) under the linear schedule.
double stm_epsilon(const StmConfig& config, std::size_t frame);

struct StmEvalPoint {
    std::size_t frame = 0;
    double mean_reward = 0.0;
    double std_reward = 0.0;
    double mean_loss = 0.0; // over the updates since the previous point
};

struct StmResult {
    QNetwork network; // best checkpoint
    ReplayBuffer replay;
    std::vector<StmEvalPoint> history;
    std::size_t best_index = 0;
};

using StmObserver = std::function<void(const StmEvalPoint&)>;

/// Train on one task; returns the evaluation-best checkpoint and the filled
/// replay buffer. Throws TrainingAborted on a non-finite loss.
StmResult train_stm(const TaskSpec& task, const StmConfig& config, std::uint64_t seed,
                    const StmObserver& observer = {});

} // namespace grimrepr
