#include "grimrepr/harness.hpp"

#include "grimrepr/errors.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace grimrepr {

// ---------------------------------------------------------------------------
// Metrics

std::string metrics_header() { return "seed,phase,step,task,mean_reward,std_reward,loss_distill,loss_pr"; }

std::string format_metrics_row(const MetricsRow& r)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%" PRIu64 ",%s,%zu,%s,%.17g,%.17g,%.17g,%.17g", r.seed, r.phase.c_str(), r.step,
                  to_string(r.task).c_str(), r.mean_reward, r.std_reward, r.loss_distill, r.loss_pr);
    return buf;
}

MetricsRow parse_metrics_row(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw std::runtime_error("metrics row has " + std::to_string(cells.size()) + " fields: " + line);
    MetricsRow r;
    r.seed = std::stoull(cells[0]);
    r.phase = cells[1];
    r.step = std::stoull(cells[2]);
    r.task = task_from_string(cells[3]);
    r.mean_reward = std::stod(cells[4]);
    r.std_reward = std::stod(cells[5]);
    r.loss_distill = std::stod(cells[6]);
    r.loss_pr = std::stod(cells[7]);
    return r;
}

void write_metrics(const fs::path& path, const std::vector<MetricsRow>& rows)
{
    if (fs::exists(path)) throw std::runtime_error("refusing to overwrite " + path.string());
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << metrics_header() << '\n';
    for (const auto& r : rows) out << format_metrics_row(r) << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<MetricsRow> read_metrics(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != metrics_header())
        throw std::runtime_error(path.string() + " does not start with the metrics header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(parse_metrics_row(line));
    return rows;
}

void merge_metrics(const std::vector<fs::path>& inputs, const fs::path& output)
{
    std::map<std::uint64_t, std::vector<MetricsRow>> by_seed;
    for (const auto& p : inputs)
        for (auto& r : read_metrics(p)) by_seed[r.seed].push_back(std::move(r));
    std::vector<MetricsRow> merged;
    for (auto& [seed, rows] : by_seed) merged.insert(merged.end(), rows.begin(), rows.end());
    write_metrics(output, merged);
}

// ---------------------------------------------------------------------------
// Artifact store

namespace {

struct MemoryStore {
    std::mutex lock;
    std::map<std::string, Checkpoint> items;
};

MemoryStore& memory_store()
{
    static MemoryStore store;
    return store;
}

std::string hex(std::uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

} // namespace

std::uint64_t fnv1a(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

ArtifactStore::ArtifactStore(fs::path dir) : dir_(std::move(dir)) {}

fs::path ArtifactStore::location(const std::string& kind, const std::string& key) const
{
    return dir_ / (kind + "-" + hex(fnv1a(kind + "\n" + key)));
}

std::optional<Checkpoint> ArtifactStore::find(const std::string& kind, const std::string& key) const
{
    if (!enabled()) return std::nullopt;
    const fs::path where = location(kind, key);
    if (dir_ == ":memory:") {
        auto& m = memory_store();
        std::lock_guard guard(m.lock);
        auto it = m.items.find(where.string());
        if (it == m.items.end()) return std::nullopt;
        return it->second;
    }
    if (!checkpoint_exists(where)) return std::nullopt;
    return load_checkpoint(where);
}

void ArtifactStore::put(const std::string& kind, const std::string& key, const Checkpoint& ckpt) const
{
    if (!enabled()) return;
    const fs::path where = location(kind, key);
    if (dir_ == ":memory:") {
        auto& m = memory_store();
        std::lock_guard guard(m.lock);
        m.items.emplace(where.string(), ckpt);
        return;
    }
    if (checkpoint_exists(where)) return;
    fs::create_directories(dir_);
    save_checkpoint(ckpt, where);
}

// ---------------------------------------------------------------------------
// Phases

std::uint64_t stm_seed(std::uint64_t seed, TaskId task) { return mix_seed(seed, 100 + static_cast<std::uint64_t>(task)); }
std::uint64_t gan_seed(std::uint64_t seed, std::size_t task_index) { return mix_seed(seed, 200 + task_index); }
std::uint64_t eval_seed(std::uint64_t seed) { return mix_seed(seed, 77); }

Checkpoint stm_to_checkpoint(const StmResult& r)
{
    Checkpoint c;
    c.kind = "stm";
    add_network(c, "net", r.network);
    c.set("best_index", std::to_string(r.best_index));
    c.set("history_count", std::to_string(r.history.size()));
    for (std::size_t i = 0; i < r.history.size(); ++i) {
        const auto& p = r.history[i];
        c.set("history." + std::to_string(i), std::to_string(p.frame) + ":" + format_real(p.mean_reward) + ":" +
                                                  format_real(p.std_reward) + ":" + format_real(p.mean_loss));
    }
    return c;
}

StmResult stm_from_checkpoints(const Checkpoint& net, const Checkpoint& replay)
{
    if (net.kind != "stm") throw std::runtime_error("checkpoint kind '" + net.kind + "' is not an STM");
    StmResult r;
    r.network = read_network(net, "net");
    r.best_index = std::stoull(net.require("best_index"));
    const std::size_t n = std::stoull(net.require("history_count"));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::string> parts;
        std::string part;
        std::istringstream in(net.require("history." + std::to_string(i)));
        while (std::getline(in, part, ':')) parts.push_back(part);
        if (parts.size() != 4) throw std::runtime_error("malformed STM history entry");
        r.history.push_back({static_cast<std::size_t>(std::stoull(parts[0])), parse_real(parts[1]),
                             parse_real(parts[2]), parse_real(parts[3])});
    }
    r.replay = ReplayBuffer::from_checkpoint(replay);
    return r;
}

namespace {

StmConfig effective_stm(const ExperimentConfig& config)
{
    StmConfig s = config.stm;
    s.eval_episodes = config.eval_episodes;
    s.eval_epsilon = config.eval_epsilon;
    return s;
}

void say(const Log& log, const std::string& msg)
{
    if (log) log(msg);
}

std::string fmt(const char* pattern, double a, double b = 0.0)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, pattern, a, b);
    return buf;
}

Checkpoint ltm_to_checkpoint(const LtmResult& r)
{
    Checkpoint c;
    c.kind = "ltm";
    add_network(c, "net", r.network);
    c.set("best_index", std::to_string(r.best_index));
    c.set("normalized", r.stats ? "1" : "0");
    if (r.stats) {
        c.set_real("norm.mu", r.stats->mu);
        c.set_real("norm.sigma", r.stats->sigma);
        c.set("norm.batches", std::to_string(r.stats->n_batches));
    }
    return c;
}

Checkpoint net_checkpoint(const std::string& kind, const QNetwork& net)
{
    Checkpoint c;
    c.kind = kind;
    add_network(c, "net", net);
    return c;
}

class RunDir {
public:
    explicit RunDir(fs::path dir, const ExperimentConfig& config) : dir_(std::move(dir))
    {
        if (dir_.empty()) return;
        if (fs::exists(dir_ / "metrics.csv"))
            throw std::runtime_error("refusing to overwrite finished run in " + dir_.string());
        fs::create_directories(dir_);
        const fs::path cfg = dir_ / "config.txt";
        if (!fs::exists(cfg)) std::ofstream(cfg, std::ios::binary) << to_text(config);
    }

    void save(const Checkpoint& c, const std::string& name) const
    {
        if (!dir_.empty()) save_checkpoint(c, dir_ / name);
    }

    void finish(const std::vector<MetricsRow>& rows) const
    {
        if (!dir_.empty()) write_metrics(dir_ / "metrics.csv", rows);
    }

private:
    fs::path dir_;
};

template <class F>
auto with_context(const char* phase, std::uint64_t seed, F&& body)
{
    try {
        return body();
    } catch (const TrainingAborted& e) {
        throw TrainingAborted(e.phase(), e.step(), std::string("seed ") + std::to_string(seed) + ": " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string(phase) + " (seed " + std::to_string(seed) + "): " + e.what());
    }
}

} // namespace

StmArtifact learn_stm(const ExperimentConfig& config, TaskId task, std::uint64_t seed, const ArtifactStore& store,
                      const Log& log)
{
    const std::uint64_t s = stm_seed(seed, task);
    const StmConfig sc = effective_stm(config);
    StmArtifact out;
    out.key = section_text(config, "stm") + "frame_stack=" + std::to_string(config.frame_stack) +
              "\neval=" + std::to_string(config.eval_episodes) + ":" + format_real(config.eval_epsilon) +
              "\ntask=" + to_string(task) + "\nseed=" + std::to_string(s) + "\n";
    if (auto net = store.find("stm", out.key)) {
        if (auto replay = store.find("replay", out.key)) {
            say(log, "stm " + to_string(task) + " seed " + std::to_string(seed) + ": reused");
            out.result = stm_from_checkpoints(*net, *replay);
            return out;
        }
    }
    const TaskSpec spec = TaskSpec::make(task, config.frame_stack);
    out.result = with_context("stm", seed, [&] {
        return train_stm(spec, sc, s, [&](const StmEvalPoint& p) {
            say(log, "stm " + to_string(task) + " seed " + std::to_string(seed) + " frame " + std::to_string(p.frame) +
                         fmt(": reward %.3f loss %.4g", p.mean_reward, p.mean_loss));
        });
    });
    store.put("stm", out.key, stm_to_checkpoint(out.result));
    store.put("replay", out.key, out.result.replay.to_checkpoint());
    return out;
}

GanBundle learn_gan(const ExperimentConfig& config, GanMode mode, const StmArtifact& stm, std::size_t task_index,
                    const GanBundle* previous, const QNetwork* activation_net, std::uint64_t seed,
                    const ArtifactStore& store, const Log& log)
{
    if ((mode == GanMode::GRIm) != (activation_net != nullptr))
        throw std::invalid_argument("learn_gan: GRIm needs an activation network and RePR must not get one");
    const std::string key = section_text(config, "gan") + "mode=" + to_string(mode) + "\nstm=" + stm.key +
                            "task_index=" + std::to_string(task_index) + "\nprevious=" +
                            (previous ? std::to_string(previous->generator.fingerprint()) : "none") +
                            "\nactivations=" + (activation_net ? std::to_string(activation_net->fingerprint()) : "none") +
                            "\nseed=" + std::to_string(seed) + "\n";
    if (auto hit = store.find("gan", key)) {
        say(log, "gan " + to_string(mode) + " task " + std::to_string(task_index) + ": reused");
        return GanBundle::from_checkpoint(*hit);
    }
    const ReplayBuffer& replay = stm.result.replay;
    const std::size_t act_size =
        activation_net ? activation_net->hidden_size(config.gan.activation_layer) : std::size_t{0};
    Rng init(mix_seed(seed, 20));
    GanBundle fresh = make_gan(replay.observation_size(), act_size, mode, config.gan, init);
    const std::size_t latent = config.gan.latent_dim;
    const RealSampler real = [&](std::size_t n, Rng& rng) {
        return compose_gan_batch(replay, previous, task_index, n, latent, rng).real;
    };
    GanTrainResult r = with_context("gan", seed, [&] {
        return train_gan(std::move(fresh), real, activation_net, config.gan, seed);
    });
    say(log, "gan " + to_string(mode) + " task " + std::to_string(task_index) +
                 fmt(": critic loss %.4g, generator loss %.4g", r.stats.last_disc_loss, r.stats.last_gen_loss));
    store.put("gan", key, r.bundle.to_checkpoint());
    return std::move(r.bundle);
}

std::vector<MetricsRow> evaluation_rows(const QNetwork& net, const std::vector<TaskSpec>& tasks,
                                        const ExperimentConfig& config, std::uint64_t seed, const std::string& phase,
                                        std::size_t step, double loss_distill, double loss_pr)
{
    const auto results = evaluate(net, tasks, config.eval_episodes, config.eval_epsilon, eval_seed(seed));
    std::vector<MetricsRow> rows;
    for (std::size_t t = 0; t < tasks.size(); ++t)
        rows.push_back({seed, phase, step, tasks[t].id, results[t].mean, results[t].std, loss_distill, loss_pr});
    return rows;
}

SequenceResult run_sequence(const ExperimentConfig& config, std::uint64_t seed, const fs::path& run_dir,
                            const ArtifactStore& store, const Log& log)
{
    validate(config);
    const std::vector<TaskSpec> tasks = task_specs(config);
    const RunDir dir(run_dir, config);
    SequenceResult result;
    std::vector<StmArtifact> stms;
    std::optional<GanBundle> gan;

    for (std::size_t i = 1; i <= tasks.size(); ++i) {
        const TaskSpec& task = tasks[i - 1];
        const std::string name = to_string(task.id);

        stms.push_back(learn_stm(config, task.id, seed, store, log));
        const StmArtifact& stm = stms.back();
        for (const auto& p : stm.result.history)
            result.rows.push_back({seed, "stm_" + name, p.frame, task.id, p.mean_reward, p.std_reward, 0.0, 0.0});
        dir.save(stm_to_checkpoint(stm.result), "stm_" + name);
        dir.save(stm.result.replay.to_checkpoint(), "replay_" + name);

        LtmConfig lc = config.ltm;
        lc.normalize = config.normalize;
        const QNetwork* prev = i >= 2 ? &result.ltm.back() : nullptr;
        StateSampler pseudo;
        if (i >= 2 && config.rehearsal == RehearsalSource::Replay) {
            pseudo = [&stms, i](std::size_t n, Rng& rng) {
                Tensor out({n, stms.front().result.replay.observation_size()});
                for (std::size_t r = 0; r < n; ++r) {
                    const ReplayBuffer& src = stms[rng.index(i - 1)].result.replay;
                    const std::size_t k = rng.index(src.size());
                    const Tensor row = src.states(std::span<const std::size_t>(&k, 1));
                    std::copy(row.data().begin(), row.data().end(), out.row(r).begin());
                }
                return out;
            };
        } else if (i >= 2) {
            if (!gan) throw std::logic_error("run_sequence: no generator from the previous task");
            pseudo = [&gan](std::size_t n, Rng& rng) { return gan->sample(n, rng); };
        }

        const std::string phase = "ltm_" + name;
        if (prev) {
            const auto rows = evaluation_rows(*prev, tasks, config, seed, phase, 0, 0.0, 0.0);
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());
        }
        const LtmObserver observer = [&](const LtmEvalPoint& p, const QNetwork& net) {
            const auto rows = evaluation_rows(net, tasks, config, seed, phase, p.step, p.mean_distill, p.mean_pr);
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());
            dir.save(net_checkpoint("ltm_snapshot", net), phase + "_step" + std::to_string(p.step));
            std::string msg = phase + " seed " + std::to_string(seed) + " step " + std::to_string(p.step) +
                              fmt(": loss %.4g (distill %.4g", p.mean_loss, p.mean_distill) + fmt(", pr %.4g)", p.mean_pr);
            for (const auto& r : rows) msg += " " + to_string(r.task) + fmt("=%.2f", r.mean_reward);
            say(log, msg);
        };
        LtmResult lr = with_context("ltm", seed, [&] {
            return train_ltm(i, prev, stm.result.network, stm.result.replay, i >= 2 ? &pseudo : nullptr, lc,
                             mix_seed(seed, 300 + i), observer);
        });
        if (!prev && !config.normalize) {
            const auto rows = evaluation_rows(lr.network, tasks, config, seed, phase, 0, 0.0, 0.0);
            result.rows.insert(result.rows.end(), rows.begin(), rows.end());
        }
        dir.save(ltm_to_checkpoint(lr), "ltm_" + name);
        result.ltm.push_back(std::move(lr.network));

        if (i < tasks.size() || config.train_final_gan) {
            const QNetwork* act = config.method == GanMode::GRIm ? &result.ltm.back() : nullptr;
            gan = learn_gan(config, config.method, stm, i, gan ? &*gan : nullptr, act, gan_seed(seed, i), store, log);
            dir.save(gan->to_checkpoint(), "gan_" + name);
        }
    }
    dir.finish(result.rows);
    return result;
}

std::string to_string(ScratchArm arm)
{
    switch (arm) {
    case ScratchArm::Matched: return "matched";
    case ScratchArm::Mismatched: return "mismatched";
    case ScratchArm::RePR: return "repr";
    }
    return "?";
}

ScratchArm scratch_arm_from_string(const std::string& s)
{
    if (s == "matched") return ScratchArm::Matched;
    if (s == "mismatched") return ScratchArm::Mismatched;
    if (s == "repr") return ScratchArm::RePR;
    throw std::invalid_argument("unknown scratch arm '" + s + "' (expected matched, mismatched or repr)");
}

std::vector<MetricsRow> scratch_relearn(const ExperimentConfig& config, std::uint64_t seed, ScratchArm arm,
                                        std::uint64_t mismatch_seed, const fs::path& run_dir,
                                        const ArtifactStore& store, const Log& log)
{
    validate(config);
    if (arm == ScratchArm::Mismatched && mismatch_seed == seed)
        throw std::invalid_argument("scratch_relearn: the mismatched teacher needs a different seed");
    const TaskSpec task = TaskSpec::make(config.tasks.front(), config.frame_stack);
    const RunDir dir(run_dir, config);

    const StmArtifact teacher = learn_stm(config, task.id, seed, store, log);
    GanBundle gan;
    if (arm == ScratchArm::RePR) {
        gan = learn_gan(config, GanMode::RePR, teacher, 1, nullptr, nullptr, gan_seed(seed, 1), store, log);
    } else if (arm == ScratchArm::Matched) {
        gan = learn_gan(config, GanMode::GRIm, teacher, 1, nullptr, &teacher.result.network, gan_seed(seed, 1), store,
                        log);
    } else {
        const StmArtifact other = learn_stm(config, task.id, mismatch_seed, store, log);
        gan = learn_gan(config, GanMode::GRIm, teacher, 1, nullptr, &other.result.network, gan_seed(seed, 1), store,
                        log);
    }
    dir.save(gan.to_checkpoint(), "gan_" + to_string(arm));

    const QNetwork& labeller = teacher.result.network;
    std::optional<NormStats> stats;
    if (config.scratch.normalize) {
        Rng norm_rng(mix_seed(seed, 34));
        stats = estimate_norm_stats(labeller, teacher.result.replay, config.ltm.norm_batches,
                                    config.ltm.norm_batch_size, norm_rng);
    }
    Rng init(mix_seed(seed, 401));
    Rng pseudo_rng(mix_seed(seed, 402));
    QNetwork student(labeller.spec(), init);
    Optimizer opt(config.scratch.optimizer);
    const std::string phase = "scratch_" + to_string(arm);
    std::vector<MetricsRow> rows;
    double window = 0.0;

    for (std::size_t step = 1; step <= config.scratch.steps; ++step) {
        PseudoItems items = label_pseudo_items(gan.sample(config.scratch.batch_size, pseudo_rng), labeller);
        if (stats) items.targets = normalize_q(items.targets, *stats);
        ad::Graph graph;
        const auto params = student.bind(graph, true);
        const ad::Var loss = pr_loss(graph, items, student, params);
        const double lv = loss.value().item();
        std::vector<Tensor> grads = collect(graph.backward(loss), params);
        if (!std::isfinite(lv) || !all_finite(grads))
            throw TrainingAborted("scratch", step, "seed " + std::to_string(seed) + ": non-finite loss");
        opt.step(student.params(), std::move(grads));
        window += lv;
        if (step % config.scratch.eval_interval == 0) {
            const double mean_loss = window / static_cast<double>(config.scratch.eval_interval);
            window = 0.0;
            const auto r = evaluation_rows(student, {task}, config, seed, phase, step, 0.0, mean_loss);
            rows.insert(rows.end(), r.begin(), r.end());
            dir.save(net_checkpoint("scratch_snapshot", student), phase + "_step" + std::to_string(step));
            say(log, phase + " seed " + std::to_string(seed) + " step " + std::to_string(step) +
                         fmt(": loss %.4g reward %.2f", mean_loss, r.front().mean_reward));
        }
    }
    dir.finish(rows);
    return rows;
}

} // namespace grimrepr
