#pragma once

#include "grimrepr/autodiff.hpp"
#include "grimrepr/mlp.hpp"
#include "grimrepr/short_term.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

// Long-term memory: the new task is distilled from the short-term network
// while earlier tasks are rehearsed on generated states labelled by the
// previous long-term network.

namespace grimrepr {

inline constexpr double kSigmaFloor = 1e-6;

struct NormStats {
    double mu = 0.0;
    double sigma = 1.0;
    std::size_t n_batches = 0;
};

/// Pooled mean and population standard deviation of every value in `q`.
NormStats pooled_stats(std::span<const double> q);

/// Scalar statistics of the STM's Q-values over `n_batches` replay batches.
NormStats estimate_norm_stats(const QNetwork& stm, const ReplayBuffer& replay, std::size_t n_batches,
                              std::size_t batch_size, Rng& rng);

std::vector<double> normalize_q(std::span<const double> q, const NormStats& stats);
Tensor normalize_q(const Tensor& q, const NormStats& stats);

/// mean_j sum_a (Q(s_j, a; student) - T(s_j, a))^2 where T is the teacher's
/// output, normalized by `stats` when given. The teacher never enters the graph.
ad::Var distill_loss(ad::Graph& graph, const Tensor& states, const QNetwork& student,
                     std::span<const ad::Var> student_params, const QNetwork& teacher, const NormStats* stats = nullptr);

struct PseudoItems {
    Tensor states;  // [n, observation], generated
    Tensor targets; // [n, actions], labelled by the previous long-term network
};

/// Label `states` with the frozen network `labeller`.
PseudoItems label_pseudo_items(Tensor states, const QNetwork& labeller);

/// mean_j sum_a (Q(s~_j, a; student) - target_j,a)^2
ad::Var pr_loss(ad::Graph& graph, const PseudoItems& items, const QNetwork& student,
                std::span<const ad::Var> student_params);

/// alpha * distill + (1 - alpha) * pr; alpha outside [0, 1] is rejected.
ad::Var ltm_loss(ad::Var distill, ad::Var pr, double alpha);

/// Draws n states representing earlier tasks (a generator, or real replay
/// states for the rehearsal baseline).
using StateSampler = std::function<Tensor(std::size_t, Rng&)>;

struct LtmConfig {
    double alpha = 0.5;
    bool normalize = false;
    std::size_t batch_size = 32;
    std::size_t steps = 50000;
    std::size_t eval_interval = 5000; // also the loss window for checkpoint selection
    std::size_t norm_batches = 1000;
    std::size_t norm_batch_size = 32;
    OptimizerConfig optimizer{OptimizerKind::Adam, 1e-4, 0.9, 0.9, 0.999, 1e-8, 0.0};
};

struct LtmEvalPoint {
    std::size_t step = 0;
    double mean_loss = 0.0;    // over the window ending at `step`
    double mean_distill = 0.0;
    double mean_pr = 0.0;
};

struct LtmResult {
    QNetwork network; // lowest-window-loss checkpoint
    std::optional<NormStats> stats;
    std::vector<LtmEvalPoint> history;
    std::size_t best_index = 0;
};

/// Receives every window summary with the network as it stands at that step.
using LtmObserver = std::function<void(const LtmEvalPoint&, const QNetwork&)>;

/// Teach task `task_index` (1-based) to the long-term network.
///
/// Task 1 without normalization returns a copy of the STM. Task 1 with
/// normalization distills into a fresh network. Later tasks start from
/// `prev_ltm` and need `pseudo` for rehearsal; pseudo-states are drawn afresh
/// for every batch and labelled by `prev_ltm`.
LtmResult train_ltm(std::size_t task_index, const QNetwork* prev_ltm, const QNetwork& stm, const ReplayBuffer& replay,
                    const StateSampler* pseudo, const LtmConfig& config, std::uint64_t seed,
                    const LtmObserver& observer = {});

} // namespace grimrepr
