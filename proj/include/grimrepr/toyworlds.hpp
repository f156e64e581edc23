#pragma once

#include "grimrepr/rng.hpp"
#include "grimrepr/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

// Two deterministic catch games on an 8x8 grid. They share the observation
// and action spaces but differ in layout and reward magnitude:
//
//   task A: paddle on the bottom row, ball falls from the top, reward +-1
//   task B: paddle on the top row, ball rises from the bottom, reward +-9
//
// One ball is in flight at a time. It moves one row per step and is resolved
// when it reaches the paddle's row (catch: +scale, miss: -scale); a new ball
// then appears on the spawn row. Actions: 0 left, 1 stay, 2 right. An episode
// ends after max_steps or after `lives` misses.

namespace grimrepr {

enum class TaskId : std::uint8_t { A = 0, B = 1 };

std::string to_string(TaskId id);
TaskId task_from_string(const std::string& s);

struct TaskSpec {
    TaskId id = TaskId::A;
    std::size_t grid_size = 8;
    std::size_t action_count = 3;
    double reward_scale = 1.0;
    std::size_t max_steps = 100;
    std::size_t frame_stack = 2;
    std::size_t lives = 3;

    static TaskSpec make(TaskId id, std::size_t frame_stack = 2);

    std::size_t frame_size() const { return grid_size * grid_size; }
    std::size_t observation_size() const { return frame_size() * frame_stack; }
    std::size_t paddle_row() const { return id == TaskId::A ? grid_size - 1 : 0; }
    std::size_t spawn_row() const { return id == TaskId::A ? 0 : grid_size - 1; }
    double background_value() const { return 0.0; }
    double paddle_value() const { return id == TaskId::A ? 1.0 : 0.5; }
    double ball_value() const { return id == TaskId::A ? 1.0 : -1.0; }
    /// Number of balls that land within one full-length episode.
    std::size_t landings_per_episode() const { return max_steps / (grid_size - 1); }
};

struct Ball {
    int row = 0;
    int col = 0;
};

struct EnvState {
    int paddle = 0;
    std::vector<Ball> balls;
    std::size_t step = 0;
    std::size_t misses = 0;
    std::uint64_t seed = 0;
    Rng rng;
    bool terminal = false;
    std::vector<double> frames; // frame_stack frames, oldest first
};

using Observation = std::vector<double>;

struct ResetResult {
    EnvState state;
    Observation observation;
};

struct StepResult {
    EnvState state;
    Observation observation;
    double reward = 0.0;
    bool terminal = false;
};

ResetResult reset(const TaskSpec& task, std::uint64_t seed);
/// Throws std::logic_error on a terminal state and std::out_of_range on a bad action.
StepResult step(const TaskSpec& task, const EnvState& state, std::size_t action);

/// Move toward the ball; stay when aligned. Catches every ball.
std::size_t oracle_action(const TaskSpec& task, const EnvState& state);
/// The same policy read off an observation, as Q-values (1 for the chosen action, 0 otherwise).
std::vector<double> oracle_q(const TaskSpec& task, std::span<const double> observation);

/// Observations as rows of a [n, observation_size] tensor.
Tensor stack_observations(const std::vector<Observation>& observations);

std::string render(const TaskSpec& task, const EnvState& state);

} // namespace grimrepr
