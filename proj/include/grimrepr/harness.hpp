#pragma once

#include "grimrepr/checkpoint.hpp"
#include "grimrepr/config.hpp"
#include "grimrepr/evaluation.hpp"
#include "grimrepr/generative_memory.hpp"
#include "grimrepr/long_term.hpp"
#include "grimrepr/short_term.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace grimrepr {

using Log = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
    std::uint64_t seed = 0;
    std::string phase; // e.g. "stm_A", "ltm_B", "scratch_matched"
    std::size_t step = 0;
    TaskId task = TaskId::A;
    double mean_reward = 0.0;
    double std_reward = 0.0;
    double loss_distill = 0.0;
    double loss_pr = 0.0;

    bool operator==(const MetricsRow&) const = default;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);
MetricsRow parse_metrics_row(const std::string& line);

/// Refuses to replace an existing file.
void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);
/// Concatenate per-seed files under one header, ordered by seed then input order.
void merge_metrics(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& output);

// ---------------------------------------------------------------------------
// Content-addressed store of phase outputs, so that runs sharing a phase
// (same settings, same inputs, same seed) train it once. A default-constructed
// store keeps nothing.

class ArtifactStore {
public:
    ArtifactStore() = default;
    explicit ArtifactStore(std::filesystem::path dir);

    bool enabled() const { return !dir_.empty(); }
    std::optional<Checkpoint> find(const std::string& kind, const std::string& key) const;
    void put(const std::string& kind, const std::string& key, const Checkpoint& ckpt) const;
    std::filesystem::path location(const std::string& kind, const std::string& key) const;

private:
    std::filesystem::path dir_;
};

std::uint64_t fnv1a(const std::string& text);

// ---------------------------------------------------------------------------
// Phases

struct StmArtifact {
    StmResult result;
    std::string key; // identifies the STM and its replay in the store
};

Checkpoint stm_to_checkpoint(const StmResult& r);
StmResult stm_from_checkpoints(const Checkpoint& net, const Checkpoint& replay);

/// Seed of the STM for `task` inside experiment seed `seed`.
std::uint64_t stm_seed(std::uint64_t seed, TaskId task);
/// Seed of the generator trained after task number `task_index` (1-based).
std::uint64_t gan_seed(std::uint64_t seed, std::size_t task_index);
/// Evaluation seed shared by every evaluation in an experiment seed.
std::uint64_t eval_seed(std::uint64_t seed);

StmArtifact learn_stm(const ExperimentConfig& config, TaskId task, std::uint64_t seed, const ArtifactStore& store,
                      const Log& log = {});

/// Train the generator of task `task_index`. `activation_net` is the frozen
/// network whose hidden activations feed the second critic (GRIm only);
/// `previous` is the generator of the task before (task_index >= 2).
GanBundle learn_gan(const ExperimentConfig& config, GanMode mode, const StmArtifact& stm, std::size_t task_index,
                    const GanBundle* previous, const QNetwork* activation_net, std::uint64_t seed,
                    const ArtifactStore& store, const Log& log = {});

std::vector<MetricsRow> evaluation_rows(const QNetwork& net, const std::vector<TaskSpec>& tasks,
                                        const ExperimentConfig& config, std::uint64_t seed, const std::string& phase,
                                        std::size_t step, double loss_distill, double loss_pr);

// ---------------------------------------------------------------------------
// Experiments

struct SequenceResult {
    std::vector<MetricsRow> rows;
    std::vector<QNetwork> ltm; // final long-term network after each task
};

/// One seed of the continual-learning sequence: per task, STM then LTM then
/// generator. Writes checkpoints, config.txt and metrics.csv under `run_dir`
/// when it is non-empty; refuses to write into a directory that already
/// holds metrics.
SequenceResult run_sequence(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& run_dir,
                            const ArtifactStore& store = {}, const Log& log = {});

enum class ScratchArm : std::uint8_t { Matched, Mismatched, RePR };

std::string to_string(ScratchArm arm);
ScratchArm scratch_arm_from_string(const std::string& s);

/// Teach a freshly initialised network the first task using only generated
/// states labelled by that task's STM. The generator's second critic sees the
/// activations of the same STM (matched), of an STM trained with
/// `mismatch_seed` (mismatched), or there is no second critic (RePR).
std::vector<MetricsRow> scratch_relearn(const ExperimentConfig& config, std::uint64_t seed, ScratchArm arm,
                                        std::uint64_t mismatch_seed, const std::filesystem::path& run_dir,
                                        const ArtifactStore& store = {}, const Log& log = {});

} // namespace grimrepr
