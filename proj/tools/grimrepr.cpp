// Command-line front end for the continual-learning experiments.

#include "grimrepr/errors.hpp"
#include "grimrepr/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using namespace grimrepr;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string method;
    std::string normalize;
    std::string out = "runs";
    std::string cache;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c)
{
    app->add_option("--config", c.config_path, "Configuration file (key = value sections)");
    app->add_option("--set", c.overrides, "Override one setting, key=value (repeatable)");
    app->add_option("--method", c.method, "Generator type")->check(CLI::IsMember({"repr", "grim"}));
    app->add_option("--normalize", c.normalize, "Standard-normalize distilled Q-values")
        ->check(CLI::IsMember({"on", "off"}));
    app->add_option("--out", c.out, "Output directory");
    app->add_option("--cache", c.cache, "Directory for reusable phase outputs");
    app->add_flag("--quiet", c.quiet, "No progress messages");
}

ExperimentConfig build_config(const Common& c)
{
    ExperimentConfig config = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    if (!c.method.empty()) config.method = gan_mode_from_string(c.method);
    if (!c.normalize.empty()) set_value(config, "normalize", c.normalize);
    for (const auto& o : c.overrides) apply_override(config, o);
    validate(config);
    return config;
}

Log make_log(const Common& c)
{
    if (c.quiet) return {};
    return [](const std::string& msg) { std::cerr << msg << std::endl; };
}

ArtifactStore make_store(const Common& c) { return c.cache.empty() ? ArtifactStore{} : ArtifactStore(c.cache); }

std::vector<std::uint64_t> seeds_for(const ExperimentConfig& config, const std::vector<std::uint64_t>& given)
{
    return given.empty() ? config.seeds : given;
}

QNetwork load_net(const std::string& path)
{
    const Checkpoint c = load_checkpoint(path);
    return read_network(c, "net");
}

void print_rows(const std::vector<MetricsRow>& rows)
{
    std::cout << metrics_header() << '\n';
    for (const auto& r : rows) std::cout << format_metrics_row(r) << '\n';
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dual-memory continual reinforcement learning on toy tasks"};
    app.require_subcommand(1);
    Common common;
    std::vector<std::uint64_t> seeds;
    std::string task = "A";
    std::string arm = "matched";
    std::uint64_t mismatch_seed = 0;
    bool mismatch_given = false;
    std::size_t task_index = 1;
    std::string stm_path, replay_path, prev_path, gan_path, net_path, act_path;
    std::vector<std::string> metrics_inputs;

    auto* stm = app.add_subcommand("train-stm", "Train a short-term network on one task");
    add_common(stm, common);
    stm->add_option("--seed", seeds, "Experiment seed")->expected(1);
    stm->add_option("--task", task, "Task")->check(CLI::IsMember({"A", "B"}));

    auto* gan = app.add_subcommand("train-gan", "Train a generator on a task's replay");
    add_common(gan, common);
    gan->add_option("--seed", seeds, "Experiment seed")->expected(1);
    gan->add_option("--task", task, "Task the STM was trained on")->check(CLI::IsMember({"A", "B"}));
    gan->add_option("--task-index", task_index, "Position of the task in the sequence (1-based)");
    gan->add_option("--previous", gan_path, "Generator of the previous task");
    gan->add_option("--activations", act_path, "Network whose hidden activations feed the second critic (grim)");

    auto* ltm = app.add_subcommand("train-ltm", "Teach a task to the long-term network");
    add_common(ltm, common);
    ltm->add_option("--seed", seeds, "Experiment seed")->expected(1);
    ltm->add_option("--task-index", task_index, "Position of the task in the sequence (1-based)");
    ltm->add_option("--stm", stm_path, "STM checkpoint")->required();
    ltm->add_option("--replay", replay_path, "Replay checkpoint of the task")->required();
    ltm->add_option("--prev-ltm", prev_path, "Long-term network after the previous task");
    ltm->add_option("--gan", gan_path, "Generator of earlier tasks");

    auto* seq = app.add_subcommand("run-sequence", "Run the whole task sequence for each seed");
    add_common(seq, common);
    seq->add_option("--seed", seeds, "Seeds to run (default: the config's list)");

    auto* scratch = app.add_subcommand("scratch", "Relearn the first task from generated states only");
    add_common(scratch, common);
    scratch->add_option("--seed", seeds, "Seeds to run (default: the config's list)");
    scratch->add_option("--arm", arm, "Generator arm")->check(CLI::IsMember({"matched", "mismatched", "repr"}));
    scratch->add_option("--mismatch-seed", mismatch_seed, "Seed of the other STM for the mismatched arm")
        ->each([&](const std::string&) { mismatch_given = true; });

    auto* eval = app.add_subcommand("eval", "Evaluate a saved network");
    add_common(eval, common);
    eval->add_option("--seed", seeds, "Evaluation seed")->expected(1);
    eval->add_option("--net", net_path, "Checkpoint holding a network named 'net'")->required();

    auto* merge = app.add_subcommand("merge-metrics", "Merge per-seed metrics files");
    merge->add_option("inputs", metrics_inputs, "metrics.csv files")->required();
    merge->add_option("--out", common.out, "Merged file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (merge->parsed()) {
            merge_metrics({metrics_inputs.begin(), metrics_inputs.end()}, common.out);
            return 0;
        }
        const ExperimentConfig config = build_config(common);
        const Log log = make_log(common);
        const ArtifactStore store = make_store(common);
        const fs::path out = common.out;

        if (seq->parsed()) {
            std::vector<fs::path> files;
            for (std::uint64_t s : seeds_for(config, seeds)) {
                const fs::path dir = out / ("seed_" + std::to_string(s));
                run_sequence(config, s, dir, store, log);
                files.push_back(dir / "metrics.csv");
            }
            merge_metrics(files, out / "metrics.csv");
        } else if (scratch->parsed()) {
            const ScratchArm which = scratch_arm_from_string(arm);
            const auto list = seeds_for(config, seeds);
            std::vector<fs::path> files;
            for (std::size_t k = 0; k < list.size(); ++k) {
                std::uint64_t other = mismatch_seed;
                if (!mismatch_given) other = list.size() > 1 ? list[(k + 1) % list.size()] : list[k] + 1;
                const fs::path dir = out / (to_string(which) + "_seed_" + std::to_string(list[k]));
                scratch_relearn(config, list[k], which, other, dir, store, log);
                files.push_back(dir / "metrics.csv");
            }
            merge_metrics(files, out / ("scratch_" + to_string(which) + ".csv"));
        } else if (stm->parsed()) {
            const std::uint64_t s = seeds_for(config, seeds).front();
            const StmArtifact a = learn_stm(config, task_from_string(task), s, store, log);
            fs::create_directories(out);
            save_checkpoint(stm_to_checkpoint(a.result), out / ("stm_" + task));
            save_checkpoint(a.result.replay.to_checkpoint(), out / ("replay_" + task));
            std::vector<MetricsRow> rows;
            for (const auto& p : a.result.history)
                rows.push_back({s, "stm_" + task, p.frame, task_from_string(task), p.mean_reward, p.std_reward, 0, 0});
            write_metrics(out / ("metrics_stm_" + task + ".csv"), rows);
        } else if (gan->parsed()) {
            const std::uint64_t s = seeds_for(config, seeds).front();
            const StmArtifact a = learn_stm(config, task_from_string(task), s, store, log);
            std::optional<GanBundle> previous;
            if (!gan_path.empty()) previous = GanBundle::from_checkpoint(load_checkpoint(gan_path));
            std::optional<QNetwork> act;
            if (config.method == GanMode::GRIm) {
                if (act_path.empty()) throw std::invalid_argument("train-gan --method grim needs --activations");
                act = load_net(act_path);
            }
            const GanBundle b = learn_gan(config, config.method, a, task_index, previous ? &*previous : nullptr,
                                          act ? &*act : nullptr, gan_seed(s, task_index), store, log);
            fs::create_directories(out);
            save_checkpoint(b.to_checkpoint(), out / ("gan_" + task));
        } else if (ltm->parsed()) {
            const std::uint64_t s = seeds_for(config, seeds).front();
            const Checkpoint stm_ckpt = load_checkpoint(stm_path);
            const StmResult teacher = stm_from_checkpoints(stm_ckpt, load_checkpoint(replay_path));
            std::optional<QNetwork> prev;
            if (!prev_path.empty()) prev = load_net(prev_path);
            std::optional<GanBundle> g;
            if (!gan_path.empty()) g = GanBundle::from_checkpoint(load_checkpoint(gan_path));
            StateSampler pseudo;
            if (g) pseudo = [&g](std::size_t n, Rng& rng) { return g->sample(n, rng); };
            LtmConfig lc = config.ltm;
            lc.normalize = config.normalize;
            const auto tasks = task_specs(config);
            std::vector<MetricsRow> rows;
            const LtmResult r = train_ltm(
                task_index, prev ? &*prev : nullptr, teacher.network, teacher.replay, g ? &pseudo : nullptr, lc,
                mix_seed(s, 300 + task_index), [&](const LtmEvalPoint& p, const QNetwork& net) {
                    const auto add = evaluation_rows(net, tasks, config, s, "ltm", p.step, p.mean_distill, p.mean_pr);
                    rows.insert(rows.end(), add.begin(), add.end());
                    if (log) log("ltm step " + std::to_string(p.step) + " loss " + std::to_string(p.mean_loss));
                });
            fs::create_directories(out);
            Checkpoint c;
            c.kind = "ltm";
            add_network(c, "net", r.network);
            if (r.stats) {
                c.set_real("norm.mu", r.stats->mu);
                c.set_real("norm.sigma", r.stats->sigma);
            }
            save_checkpoint(c, out / ("ltm_" + std::to_string(task_index)));
            write_metrics(out / ("metrics_ltm_" + std::to_string(task_index) + ".csv"), rows);
        } else if (eval->parsed()) {
            const std::uint64_t s = seeds_for(config, seeds).front();
            const QNetwork net = load_net(net_path);
            print_rows(evaluation_rows(net, task_specs(config), config, s, "eval", 0, 0.0, 0.0));
        }
    } catch (const TrainingAborted& e) {
        std::fprintf(stderr, "error [%s]: %s\n", e.phase().c_str(), e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
