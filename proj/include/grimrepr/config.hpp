#pragma once

#include "grimrepr/generative_memory.hpp"
#include "grimrepr/long_term.hpp"
#include "grimrepr/short_term.hpp"
#include "grimrepr/toyworlds.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

// Experiment configuration. The text form is flat key = value lines grouped in
// sections:
//
//   [experiment]
//   method = grim
//   [stm]
//   frames = 40000
//
// A key inside [stm] is addressed as "stm.frames" on the command line;
// keys of [experiment] have no prefix.

namespace grimrepr {

enum class RehearsalSource : std::uint8_t { Generator, Replay };

struct ScratchConfig {
    std::size_t steps = 20000;
    std::size_t batch_size = 32;
    std::size_t eval_interval = 2000;
    bool normalize = true;
    OptimizerConfig optimizer{OptimizerKind::Adam, 1e-4, 0.9, 0.9, 0.999, 1e-8, 0.0};
};

struct ExperimentConfig {
    GanMode method = GanMode::RePR;
    bool normalize = false;
    std::vector<TaskId> tasks{TaskId::A, TaskId::B};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::size_t frame_stack = 2;
    std::size_t eval_episodes = 30;
    double eval_epsilon = 0.05;
    RehearsalSource rehearsal = RehearsalSource::Generator;
    bool train_final_gan = true; // the last task's generator is only needed by a later task

    StmConfig stm;
    GanConfig gan;
    LtmConfig ltm;
    ScratchConfig scratch;
};

struct ConfigField {
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

/// Every configurable value, bound to `config`.
std::vector<ConfigField> config_fields(ExperimentConfig& config);

/// Apply one "key=value" assignment.
void apply_override(ExperimentConfig& config, const std::string& assignment);
void set_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_value(const ExperimentConfig& config, const std::string& key);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Full text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);
/// Only the lines of one section, e.g. "stm".
std::string section_text(const ExperimentConfig& config, const std::string& section);

/// Throws std::invalid_argument on values the pipeline cannot run with.
void validate(const ExperimentConfig& config);

std::vector<TaskSpec> task_specs(const ExperimentConfig& config);

/// Small, fast settings used by the test suite.
ExperimentConfig quick_config();

} // namespace grimrepr
