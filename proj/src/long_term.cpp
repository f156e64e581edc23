#include "grimrepr/long_term.hpp"

#include "grimrepr/errors.hpp"
#include "grimrepr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace grimrepr {

NormStats pooled_stats(std::span<const double> q)
{
    if (q.empty()) throw std::invalid_argument("pooled_stats: no values");
    double sum = 0.0;
    for (double v : q) sum += v;
    const double mu = sum / static_cast<double>(q.size());
    double ss = 0.0;
    for (double v : q) ss += (v - mu) * (v - mu);
    NormStats s;
    s.mu = mu;
    s.sigma = std::max(kSigmaFloor, std::sqrt(ss / static_cast<double>(q.size())));
    return s;
}

NormStats estimate_norm_stats(const QNetwork& stm, const ReplayBuffer& replay, std::size_t n_batches,
                              std::size_t batch_size, Rng& rng)
{
    if (replay.empty()) throw std::invalid_argument("estimate_norm_stats: empty replay buffer");
    if (n_batches == 0 || batch_size == 0) throw std::invalid_argument("estimate_norm_stats: need at least one state");
    std::vector<double> pooled;
    pooled.reserve(n_batches * batch_size * stm.output_dim());
    std::vector<std::size_t> idx(batch_size);
    for (std::size_t b = 0; b < n_batches; ++b) {
        for (std::size_t& i : idx) i = rng.index(replay.size());
        const Tensor q = stm.predict(replay.states(idx));
        pooled.insert(pooled.end(), q.data().begin(), q.data().end());
    }
    NormStats s = pooled_stats(pooled);
    s.n_batches = n_batches;
    return s;
}

std::vector<double> normalize_q(std::span<const double> q, const NormStats& stats)
{
    std::vector<double> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = (q[i] - stats.mu) / stats.sigma;
    return out;
}

Tensor normalize_q(const Tensor& q, const NormStats& stats)
{
    return Tensor(q.shape(), normalize_q(q.data(), stats));
}

namespace {

ad::Var squared_error_per_row(ad::Graph& graph, const Tensor& states, const Tensor& targets, const QNetwork& student,
                              std::span<const ad::Var> student_params)
{
    const ad::Var q = student.forward(graph, graph.constant(states), student_params);
    return ad::mean(ad::row_sum(ad::square(ad::sub(q, graph.constant(targets)))));
}

} // namespace

ad::Var distill_loss(ad::Graph& graph, const Tensor& states, const QNetwork& student,
                     std::span<const ad::Var> student_params, const QNetwork& teacher, const NormStats* stats)
{
    if (student.output_dim() != teacher.output_dim())
        throw std::invalid_argument("distill_loss: student has " + std::to_string(student.output_dim()) +
                                    " actions, teacher " + std::to_string(teacher.output_dim()));
    if (states.rank() != 2 || states.rows() == 0) throw std::invalid_argument("distill_loss: empty state batch");
    Tensor targets = teacher.predict(states);
    if (stats) targets = normalize_q(targets, *stats);
    return squared_error_per_row(graph, states, targets, student, student_params);
}

PseudoItems label_pseudo_items(Tensor states, const QNetwork& labeller)
{
    Tensor targets = labeller.predict(states);
    if (!all_finite(std::span<const Tensor>(&targets, 1)))
        throw std::runtime_error("label_pseudo_items: non-finite targets");
    return {std::move(states), std::move(targets)};
}

ad::Var pr_loss(ad::Graph& graph, const PseudoItems& items, const QNetwork& student,
                std::span<const ad::Var> student_params)
{
    if (items.states.rank() != 2 || items.states.rows() == 0) throw std::invalid_argument("pr_loss: no pseudo-items");
    if (items.targets.shape() != Shape{items.states.rows(), student.output_dim()})
        throw std::invalid_argument("pr_loss: targets " + shape_string(items.targets.shape()) +
                                    " do not match the student");
    return squared_error_per_row(graph, items.states, items.targets, student, student_params);
}

ad::Var ltm_loss(ad::Var distill, ad::Var pr, double alpha)
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ltm_loss: alpha outside [0, 1]");
    return ad::add(ad::scale(distill, alpha), ad::scale(pr, 1.0 - alpha));
}

LtmResult train_ltm(std::size_t task_index, const QNetwork* prev_ltm, const QNetwork& stm, const ReplayBuffer& replay,
                    const StateSampler* pseudo, const LtmConfig& config, std::uint64_t seed,
                    const LtmObserver& observer)
{
    if (task_index == 0) throw std::invalid_argument("train_ltm: task index is 1-based");
    if (!(config.alpha >= 0.0 && config.alpha <= 1.0)) throw std::invalid_argument("train_ltm: alpha outside [0, 1]");
    const bool rehearse = task_index >= 2;
    if (rehearse && (prev_ltm == nullptr || pseudo == nullptr || !*pseudo))
        throw std::invalid_argument("train_ltm: task " + std::to_string(task_index) +
                                    " needs the previous long-term network and a pseudo-state source");
    if (rehearse && prev_ltm->output_dim() != stm.output_dim())
        throw std::invalid_argument("train_ltm: previous long-term network and STM disagree on action count");
    if (replay.empty()) throw std::invalid_argument("train_ltm: empty replay buffer");

    LtmResult result;
    if (!rehearse && !config.normalize) {
        result.network = stm;
        return result;
    }
    if (config.eval_interval == 0 || config.steps < config.eval_interval || config.batch_size == 0)
        throw std::invalid_argument("train_ltm: need batch_size > 0 and steps >= eval_interval > 0");

    Rng init_rng(mix_seed(seed, 31));
    Rng data_rng(mix_seed(seed, 32));
    Rng pseudo_rng(mix_seed(seed, 33));
    Rng norm_rng(mix_seed(seed, 34));

    if (config.normalize)
        result.stats = estimate_norm_stats(stm, replay, config.norm_batches, config.norm_batch_size, norm_rng);
    const NormStats* stats = result.stats ? &*result.stats : nullptr;

    QNetwork net = rehearse ? *prev_ltm : Mlp(stm.spec(), init_rng);
    Optimizer opt(config.optimizer);
    std::vector<QNetwork> snapshots;
    std::vector<double> window_losses;
    double sum = 0.0, sum_d = 0.0, sum_pr = 0.0;
    std::vector<std::size_t> idx(config.batch_size);

    for (std::size_t step = 1; step <= config.steps; ++step) {
        for (std::size_t& i : idx) i = data_rng.index(replay.size());
        const Tensor states = replay.states(idx);

        ad::Graph graph;
        const auto params = net.bind(graph, true);
        const ad::Var ld = distill_loss(graph, states, net, params, stm, stats);
        ad::Var loss = ld;
        double lpr_value = 0.0;
        if (rehearse) {
            const PseudoItems items = label_pseudo_items((*pseudo)(config.batch_size, pseudo_rng), *prev_ltm);
            const ad::Var lpr = pr_loss(graph, items, net, params);
            lpr_value = lpr.value().item();
            loss = ltm_loss(ld, lpr, config.alpha);
        }
        const double lv = loss.value().item();
        std::vector<Tensor> grads = collect(graph.backward(loss), params);
        if (!std::isfinite(lv) || !all_finite(grads))
            throw TrainingAborted("ltm", step, "non-finite loss while teaching task " + std::to_string(task_index));
        opt.step(net.params(), std::move(grads));
        sum += lv;
        sum_d += ld.value().item();
        sum_pr += lpr_value;

        if (step % config.eval_interval == 0) {
            const double n = static_cast<double>(config.eval_interval);
            LtmEvalPoint p{step, sum / n, sum_d / n, sum_pr / n};
            result.history.push_back(p);
            window_losses.push_back(p.mean_loss);
            snapshots.push_back(net);
            sum = sum_d = sum_pr = 0.0;
            if (observer) observer(p, net);
        }
    }

    result.best_index = select_best_checkpoint(window_losses, Criterion::MinLoss);
    result.network = std::move(snapshots[result.best_index]);
    return result;
}

} // namespace grimrepr
