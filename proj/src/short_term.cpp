#include "grimrepr/short_term.hpp"

#include "grimrepr/errors.hpp"
#include "grimrepr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace grimrepr {

QNetwork make_qnetwork(std::size_t observation_size, const std::vector<std::size_t>& hidden, std::size_t actions,
                       Rng& rng, double slope)
{
    MlpSpec spec;
    spec.sizes.push_back(observation_size);
    spec.sizes.insert(spec.sizes.end(), hidden.begin(), hidden.end());
    spec.sizes.push_back(actions);
    spec.hidden = Activation::LeakyRelu;
    spec.output = Activation::Identity;
    spec.slope = slope;
    return Mlp(spec, rng);
}

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t observation_size, std::uint64_t seed)
    : capacity_(capacity), obs_size_(observation_size), rng_(seed)
{
    if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
    states_.assign(capacity * observation_size, 0.0);
    next_states_.assign(capacity * observation_size, 0.0);
    actions_.assign(capacity, 0);
    rewards_.assign(capacity, 0.0);
    terminals_.assign(capacity, 0);
}

void ReplayBuffer::push(const Transition& t)
{
    if (t.s.size() != obs_size_ || t.s_next.size() != obs_size_)
        throw std::invalid_argument("replay push: observation length mismatch");
    std::copy(t.s.begin(), t.s.end(), states_.begin() + static_cast<std::ptrdiff_t>(head_ * obs_size_));
    std::copy(t.s_next.begin(), t.s_next.end(), next_states_.begin() + static_cast<std::ptrdiff_t>(head_ * obs_size_));
    actions_[head_] = t.a;
    rewards_[head_] = t.r;
    terminals_[head_] = t.terminal ? 1 : 0;
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
}

std::size_t ReplayBuffer::slot(std::size_t i) const
{
    if (i >= size_) throw std::out_of_range("replay index out of range");
    return size_ < capacity_ ? i : (head_ + i) % capacity_;
}

Transition ReplayBuffer::at(std::size_t i) const
{
    const std::size_t k = slot(i);
    Transition t;
    const auto off = static_cast<std::ptrdiff_t>(k * obs_size_);
    t.s.assign(states_.begin() + off, states_.begin() + off + static_cast<std::ptrdiff_t>(obs_size_));
    t.s_next.assign(next_states_.begin() + off, next_states_.begin() + off + static_cast<std::ptrdiff_t>(obs_size_));
    t.a = actions_[k];
    t.r = rewards_[k];
    t.terminal = terminals_[k] != 0;
    return t;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n)
{
    if (size_ == 0) throw std::invalid_argument("cannot sample from an empty replay buffer");
    std::vector<std::size_t> idx(n);
    for (std::size_t& i : idx) i = rng_.index(size_);
    return idx;
}

TransitionBatch ReplayBuffer::sample(std::size_t n)
{
    const auto idx = sample_indices(n);
    TransitionBatch b;
    b.states = Tensor({n, obs_size_});
    b.next_states = Tensor({n, obs_size_});
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t k = slot(idx[j]);
        const auto off = static_cast<std::ptrdiff_t>(k * obs_size_);
        std::copy_n(states_.begin() + off, obs_size_, b.states.row(j).begin());
        std::copy_n(next_states_.begin() + off, obs_size_, b.next_states.row(j).begin());
        b.actions.push_back(actions_[k]);
        b.rewards.push_back(rewards_[k]);
        b.terminals.push_back(terminals_[k] != 0);
    }
    return b;
}

Tensor ReplayBuffer::sample_states(std::size_t n)
{
    const auto idx = sample_indices(n);
    return states(idx);
}

Tensor ReplayBuffer::states(std::span<const std::size_t> indices) const
{
    Tensor out({indices.size(), obs_size_});
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const auto off = static_cast<std::ptrdiff_t>(slot(indices[j]) * obs_size_);
        std::copy_n(states_.begin() + off, obs_size_, out.row(j).begin());
    }
    return out;
}

Tensor ReplayBuffer::all_states() const
{
    std::vector<std::size_t> idx(size_);
    for (std::size_t i = 0; i < size_; ++i) idx[i] = i;
    return states(idx);
}

Checkpoint ReplayBuffer::to_checkpoint() const
{
    Checkpoint c;
    c.kind = "replay";
    c.set("capacity", std::to_string(capacity_));
    c.set("observation_size", std::to_string(obs_size_));
    c.set("size", std::to_string(size_));
    if (size_ == 0) return c;
    Tensor s({size_, obs_size_});
    Tensor sn({size_, obs_size_});
    Tensor a({size_});
    Tensor r({size_});
    Tensor term({size_});
    for (std::size_t i = 0; i < size_; ++i) {
        const Transition t = at(i);
        std::copy(t.s.begin(), t.s.end(), s.row(i).begin());
        std::copy(t.s_next.begin(), t.s_next.end(), sn.row(i).begin());
        a[i] = static_cast<double>(t.a);
        r[i] = t.r;
        term[i] = t.terminal ? 1.0 : 0.0;
    }
    c.add_tensor("states", std::move(s));
    c.add_tensor("actions", std::move(a));
    c.add_tensor("rewards", std::move(r));
    c.add_tensor("next_states", std::move(sn));
    c.add_tensor("terminals", std::move(term));
    return c;
}

ReplayBuffer ReplayBuffer::from_checkpoint(const Checkpoint& ckpt)
{
    if (ckpt.kind != "replay") throw std::runtime_error("checkpoint kind '" + ckpt.kind + "' is not a replay buffer");
    const auto capacity = static_cast<std::size_t>(std::stoull(ckpt.require("capacity")));
    const auto obs = static_cast<std::size_t>(std::stoull(ckpt.require("observation_size")));
    const auto size = static_cast<std::size_t>(std::stoull(ckpt.require("size")));
    ReplayBuffer buf(capacity, obs, 0);
    if (size == 0) return buf;
    const Tensor& s = ckpt.tensor("states");
    const Tensor& sn = ckpt.tensor("next_states");
    const Tensor& a = ckpt.tensor("actions");
    const Tensor& r = ckpt.tensor("rewards");
    const Tensor& term = ckpt.tensor("terminals");
    for (std::size_t i = 0; i < size; ++i) {
        Transition t;
        t.s.assign(s.row(i).begin(), s.row(i).end());
        t.s_next.assign(sn.row(i).begin(), sn.row(i).end());
        t.a = static_cast<std::size_t>(a[i]);
        t.r = r[i];
        t.terminal = term[i] != 0.0;
        buf.push(t);
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Losses and action selection

namespace {

void check_gamma(double gamma)
{
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
}

} // namespace

double td_target(double r, std::span<const double> s_next, bool terminal, double gamma, const QNetwork& target)
{
    check_gamma(gamma);
    if (terminal) return r;
    Tensor x({1, s_next.size()}, std::vector<double>(s_next.begin(), s_next.end()));
    const Tensor q = target.predict(x);
    return r + gamma * *std::max_element(q.data().begin(), q.data().end());
}

std::vector<double> td_targets(const TransitionBatch& batch, double gamma, const QNetwork& target)
{
    check_gamma(gamma);
    const Tensor q = target.predict(batch.next_states);
    std::vector<double> y(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto row = q.row(j);
        y[j] = batch.terminals[j] ? batch.rewards[j] : batch.rewards[j] + gamma * *std::max_element(row.begin(), row.end());
    }
    return y;
}

ad::Var dqn_loss_from_q(ad::Var q, std::span<const std::size_t> actions, std::span<const double> targets)
{
    const Tensor& qv = q.value();
    if (actions.empty()) throw std::invalid_argument("dqn_loss: empty batch");
    if (qv.rank() != 2 || qv.rows() != actions.size() || targets.size() != actions.size())
        throw std::invalid_argument("dqn_loss: batch sizes disagree");
    Tensor mask(qv.shape(), 0.0);
    Tensor y({actions.size(), 1});
    for (std::size_t j = 0; j < actions.size(); ++j) {
        if (actions[j] >= qv.cols()) throw std::out_of_range("dqn_loss: action out of range");
        mask.at(j, actions[j]) = 1.0;
        y[j] = targets[j];
    }
    ad::Graph& g = *q.graph;
    const ad::Var taken = ad::row_sum(ad::mul(q, g.constant(std::move(mask))));
    return ad::mean(ad::square(ad::sub(taken, g.constant(std::move(y)))));
}

ad::Var dqn_loss(ad::Graph& graph, const TransitionBatch& batch, const QNetwork& predictor,
                 std::span<const ad::Var> predictor_params, const QNetwork& target, double gamma)
{
    if (batch.size() == 0) throw std::invalid_argument("dqn_loss: empty batch");
    const std::vector<double> y = td_targets(batch, gamma, target);
    const ad::Var q = predictor.forward(graph, graph.constant(batch.states), predictor_params);
    return dqn_loss_from_q(q, batch.actions, y);
}

std::size_t argmax(std::span<const double> q)
{
    if (q.empty()) throw std::invalid_argument("argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < q.size(); ++i)
        if (q[i] > q[best]) best = i;
    return best;
}

std::size_t select_action(std::span<const double> q, double epsilon, Rng& rng)
{
    if (q.empty()) throw std::invalid_argument("select_action: empty Q vector");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("select_action: epsilon outside [0, 1]");
    if (epsilon > 0.0 && rng.uniform() < epsilon) return rng.index(q.size());
    return argmax(q);
}

// ---------------------------------------------------------------------------
// Training

double dqn_update(QNetwork& net, const QNetwork& target, Optimizer& opt, const TransitionBatch& batch, double gamma,
                  std::size_t step)
{
    ad::Graph graph;
    const auto params = net.bind(graph, true);
    const ad::Var loss = dqn_loss(graph, batch, net, params, target, gamma);
    const double lv = loss.value().item();
    std::vector<Tensor> grads = collect(graph.backward(loss), params);
    if (!std::isfinite(lv) || !all_finite(grads)) throw TrainingAborted("stm", step, "non-finite Q-learning loss");
    opt.step(net.params(), std::move(grads));
    return lv;
}

double stm_epsilon(const StmConfig& config, std::size_t frame)
{
    const double horizon = std::max(1.0, config.anneal_fraction * static_cast<double>(config.frames));
    const double t = static_cast<double>(frame) / horizon;
    if (t >= 1.0) return config.epsilon_end;
    return config.epsilon_start + t * (config.epsilon_end - config.epsilon_start);
}

StmResult train_stm(const TaskSpec& task, const StmConfig& config, std::uint64_t seed, const StmObserver& observer)
{
    if (config.eval_interval == 0 || config.update_every == 0 || config.sync_interval == 0)
        throw std::invalid_argument("train_stm: intervals must be positive");
    if (config.frames < config.eval_interval) throw std::invalid_argument("train_stm: frames < eval_interval");
    check_gamma(config.gamma);

    Rng init_rng(mix_seed(seed, 11));
    Rng act_rng(mix_seed(seed, 12));
    QNetwork net = make_qnetwork(task.observation_size(), config.hidden, task.action_count, init_rng, config.slope);
    QNetwork target = net;
    Optimizer opt(config.optimizer);
    ReplayBuffer replay(config.replay_capacity, task.observation_size(), mix_seed(seed, 13));

    std::uint64_t episode = 0;
    ResetResult start = reset(task, mix_seed(seed, 1000 + episode));
    EnvState state = std::move(start.state);
    Observation obs = std::move(start.observation);

    StmResult result;
    std::vector<QNetwork> snapshots;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;

    for (std::size_t frame = 1; frame <= config.frames; ++frame) {
        const double eps = stm_epsilon(config, frame);
        const Tensor q = net.predict(Tensor({1, obs.size()}, obs));
        const std::size_t a = select_action(q.row(0), eps, act_rng);
        StepResult s = step(task, state, a);
        replay.push(Transition{obs, a, s.reward, s.observation, s.terminal});
        if (s.terminal) {
            ++episode;
            ResetResult r = reset(task, mix_seed(seed, 1000 + episode));
            state = std::move(r.state);
            obs = std::move(r.observation);
        } else {
            state = std::move(s.state);
            obs = std::move(s.observation);
        }

        if (frame >= config.learning_starts && frame % config.update_every == 0) {
            loss_sum += dqn_update(net, target, opt, replay.sample(config.batch_size), config.gamma, frame);
            ++loss_count;
        }
        if (frame % config.sync_interval == 0) target = net;

        if (frame % config.eval_interval == 0) {
            const EvalResult ev =
                evaluate(net, {task}, config.eval_episodes, config.eval_epsilon, mix_seed(seed, 77))[0];
            StmEvalPoint p{frame, ev.mean, ev.std, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0};
            result.history.push_back(p);
            snapshots.push_back(net);
            loss_sum = 0.0;
            loss_count = 0;
            if (observer) observer(p);
        }
    }

    std::vector<double> scores;
    for (const auto& p : result.history) scores.push_back(p.mean_reward);
    result.best_index = select_best_checkpoint(scores, Criterion::MaxReward);
    result.network = std::move(snapshots[result.best_index]);
    result.replay = std::move(replay);
    return result;
}

} // namespace grimrepr
