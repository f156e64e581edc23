#include "grimrepr/toyworlds.hpp"

#include <algorithm>
#include <stdexcept>

namespace grimrepr {

std::string to_string(TaskId id) { return id == TaskId::A ? "A" : "B"; }

TaskId task_from_string(const std::string& s)
{
    if (s == "A" || s == "a") return TaskId::A;
    if (s == "B" || s == "b") return TaskId::B;
    throw std::invalid_argument("unknown task '" + s + "'");
}

TaskSpec TaskSpec::make(TaskId id, std::size_t frame_stack)
{
    TaskSpec t;
    t.id = id;
    t.reward_scale = id == TaskId::A ? 1.0 : 9.0;
    t.frame_stack = frame_stack;
    return t;
}

namespace {

std::vector<double> draw_frame(const TaskSpec& task, const EnvState& s)
{
    const std::size_t g = task.grid_size;
    std::vector<double> frame(g * g, task.background_value());
    frame[task.paddle_row() * g + static_cast<std::size_t>(s.paddle)] = task.paddle_value();
    for (const Ball& b : s.balls)
        frame[static_cast<std::size_t>(b.row) * g + static_cast<std::size_t>(b.col)] = task.ball_value();
    return frame;
}

Observation observe(const EnvState& s) { return s.frames; }

void push_frame(const TaskSpec& task, EnvState& s)
{
    const std::size_t fs = task.frame_size();
    std::vector<double> frame = draw_frame(task, s);
    if (s.frames.size() != fs * task.frame_stack) {
        s.frames.clear();
        for (std::size_t i = 0; i < task.frame_stack; ++i) s.frames.insert(s.frames.end(), frame.begin(), frame.end());
        return;
    }
    std::copy(s.frames.begin() + static_cast<std::ptrdiff_t>(fs), s.frames.end(), s.frames.begin());
    std::copy(frame.begin(), frame.end(), s.frames.end() - static_cast<std::ptrdiff_t>(fs));
}

Ball spawn(const TaskSpec& task, Rng& rng)
{
    return Ball{static_cast<int>(task.spawn_row()), static_cast<int>(rng.index(task.grid_size))};
}

} // namespace

ResetResult reset(const TaskSpec& task, std::uint64_t seed)
{
    EnvState s;
    s.seed = seed;
    s.rng = Rng(mix_seed(seed, static_cast<std::uint64_t>(task.id)));
    s.paddle = static_cast<int>((task.grid_size - 1) / 2);
    s.balls.push_back(spawn(task, s.rng));
    push_frame(task, s);
    Observation obs = observe(s);
    return {std::move(s), std::move(obs)};
}

StepResult step(const TaskSpec& task, const EnvState& state, std::size_t action)
{
    if (state.terminal) throw std::logic_error("step called on a terminal state");
    if (action >= task.action_count) throw std::out_of_range("action " + std::to_string(action) + " out of range");

    StepResult r;
    EnvState s = state;
    const int last = static_cast<int>(task.grid_size) - 1;
    s.paddle = std::clamp(s.paddle + static_cast<int>(action) - 1, 0, last);
    const int dir = task.id == TaskId::A ? 1 : -1;
    const int paddle_row = static_cast<int>(task.paddle_row());
    for (Ball& b : s.balls) {
        b.row += dir;
        if (b.row == paddle_row) {
            if (b.col == s.paddle) {
                r.reward += task.reward_scale;
            } else {
                r.reward -= task.reward_scale;
                ++s.misses;
            }
            b = spawn(task, s.rng);
        }
    }
    ++s.step;
    s.terminal = s.step >= task.max_steps || s.misses >= task.lives;
    push_frame(task, s);
    r.terminal = s.terminal;
    r.observation = observe(s);
    r.state = std::move(s);
    return r;
}

std::size_t oracle_action(const TaskSpec& task, const EnvState& state)
{
    (void)task;
    if (state.balls.empty()) return 1;
    const int target = state.balls.front().col;
    if (target < state.paddle) return 0;
    if (target > state.paddle) return 2;
    return 1;
}

std::vector<double> oracle_q(const TaskSpec& task, std::span<const double> observation)
{
    if (observation.size() != task.observation_size())
        throw std::invalid_argument("oracle_q: observation has wrong length");
    const std::size_t g = task.grid_size;
    const auto frame = observation.subspan(observation.size() - task.frame_size());
    int paddle = -1;
    int ball = -1;
    for (std::size_t c = 0; c < g; ++c)
        if (frame[task.paddle_row() * g + c] != task.background_value()) paddle = static_cast<int>(c);
    for (std::size_t r = 0; r < g; ++r) {
        if (r == task.paddle_row()) continue;
        for (std::size_t c = 0; c < g; ++c)
            if (frame[r * g + c] != task.background_value()) ball = static_cast<int>(c);
    }
    std::vector<double> q(task.action_count, 0.0);
    std::size_t a = 1;
    if (paddle >= 0 && ball >= 0) a = ball < paddle ? 0 : (ball > paddle ? 2 : 1);
    q[a] = 1.0;
    return q;
}

Tensor stack_observations(const std::vector<Observation>& observations)
{
    if (observations.empty()) throw std::invalid_argument("stack_observations: empty");
    const std::size_t n = observations.front().size();
    Tensor out({observations.size(), n});
    for (std::size_t i = 0; i < observations.size(); ++i) {
        if (observations[i].size() != n) throw std::invalid_argument("stack_observations: ragged input");
        std::copy(observations[i].begin(), observations[i].end(), out.row(i).begin());
    }
    return out;
}

std::string render(const TaskSpec& task, const EnvState& state)
{
    const std::size_t g = task.grid_size;
    const auto frame = std::span<const double>(state.frames).subspan(state.frames.size() - task.frame_size());
    std::string out;
    for (std::size_t r = 0; r < g; ++r) {
        for (std::size_t c = 0; c < g; ++c) {
            const bool lit = frame[r * g + c] != task.background_value();
            if (r == task.paddle_row() && lit)
                out += '=';
            else
                out += lit ? 'o' : '.';
        }
        out += '\n';
    }
    out += "step " + std::to_string(state.step) + " misses " + std::to_string(state.misses) +
           (state.terminal ? " (terminal)" : "") + "\n";
    return out;
}

} // namespace grimrepr
