#include "grimrepr/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace grimrepr {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::size_t to_count(const std::string& s)
{
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size() || s.front() == '-') throw std::invalid_argument("not a count: '" + s + "'");
    return static_cast<std::size_t>(v);
}

double to_real(const std::string& s)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

bool to_flag(const std::string& s)
{
    if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
    if (s == "off" || s == "false" || s == "0" || s == "no") return false;
    throw std::invalid_argument("not a flag: '" + s + "' (expected on/off)");
}

std::string real_text(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T, class Fmt>
std::string join(const std::vector<T>& v, Fmt fmt)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
    return out;
}

struct Builder {
    std::vector<ConfigField>& out;

    void count(const std::string& key, std::size_t& v)
    {
        out.push_back({key, [&v] { return std::to_string(v); }, [&v](const std::string& s) { v = to_count(s); }});
    }
    void seed(const std::string& key, std::uint64_t& v)
    {
        out.push_back({key, [&v] { return std::to_string(v); }, [&v](const std::string& s) { v = to_count(s); }});
    }
    void real(const std::string& key, double& v)
    {
        out.push_back({key, [&v] { return real_text(v); }, [&v](const std::string& s) { v = to_real(s); }});
    }
    void flag(const std::string& key, bool& v)
    {
        out.push_back({key, [&v] { return std::string(v ? "on" : "off"); },
                       [&v](const std::string& s) { v = to_flag(s); }});
    }
    void counts(const std::string& key, std::vector<std::size_t>& v)
    {
        out.push_back({key, [&v] { return join(v, [](std::size_t x) { return std::to_string(x); }); },
                       [&v](const std::string& s) {
                           std::vector<std::size_t> parsed;
                           for (const auto& item : split_list(s)) parsed.push_back(to_count(item));
                           v = std::move(parsed);
                       }});
    }
    void optimizer(const std::string& prefix, OptimizerConfig& o)
    {
        out.push_back({prefix + ".kind", [&o] { return to_string(o.kind); },
                       [&o](const std::string& s) { o.kind = optimizer_from_string(s); }});
        real(prefix + ".lr", o.lr);
        real(prefix + ".momentum", o.momentum);
        real(prefix + ".beta1", o.beta1);
        real(prefix + ".beta2", o.beta2);
        real(prefix + ".eps", o.eps);
        real(prefix + ".clip_norm", o.clip_norm);
    }
};

std::string section_of(const std::string& key)
{
    const auto dot = key.find('.');
    return dot == std::string::npos ? "experiment" : key.substr(0, dot);
}

std::string local_key(const std::string& key)
{
    const auto dot = key.find('.');
    return dot == std::string::npos ? key : key.substr(dot + 1);
}

} // namespace

std::vector<ConfigField> config_fields(ExperimentConfig& c)
{
    std::vector<ConfigField> f;
    Builder b{f};

    f.push_back({"method", [&c] { return to_string(c.method); },
                 [&c](const std::string& s) { c.method = gan_mode_from_string(s); }});
    b.flag("normalize", c.normalize);
    f.push_back({"tasks", [&c] { return join(c.tasks, [](TaskId t) { return to_string(t); }); },
                 [&c](const std::string& s) {
                     std::vector<TaskId> parsed;
                     for (const auto& item : split_list(s)) parsed.push_back(task_from_string(item));
                     c.tasks = std::move(parsed);
                 }});
    f.push_back({"seeds", [&c] { return join(c.seeds, [](std::uint64_t x) { return std::to_string(x); }); },
                 [&c](const std::string& s) {
                     std::vector<std::uint64_t> parsed;
                     for (const auto& item : split_list(s)) parsed.push_back(to_count(item));
                     c.seeds = std::move(parsed);
                 }});
    b.count("frame_stack", c.frame_stack);
    b.count("eval_episodes", c.eval_episodes);
    b.real("eval_epsilon", c.eval_epsilon);
    f.push_back({"rehearsal", [&c] { return std::string(c.rehearsal == RehearsalSource::Replay ? "replay" : "generator"); },
                 [&c](const std::string& s) {
                     if (s == "generator") c.rehearsal = RehearsalSource::Generator;
                     else if (s == "replay") c.rehearsal = RehearsalSource::Replay;
                     else throw std::invalid_argument("rehearsal must be generator or replay, got '" + s + "'");
                 }});
    b.flag("train_final_gan", c.train_final_gan);

    StmConfig& s = c.stm;
    b.counts("stm.hidden", s.hidden);
    b.real("stm.slope", s.slope);
    b.count("stm.frames", s.frames);
    b.count("stm.replay_capacity", s.replay_capacity);
    b.count("stm.batch_size", s.batch_size);
    b.count("stm.learning_starts", s.learning_starts);
    b.count("stm.update_every", s.update_every);
    b.count("stm.sync_interval", s.sync_interval);
    b.real("stm.gamma", s.gamma);
    b.optimizer("stm.optimizer", s.optimizer);
    b.real("stm.epsilon_start", s.epsilon_start);
    b.real("stm.epsilon_end", s.epsilon_end);
    b.real("stm.anneal_fraction", s.anneal_fraction);
    b.count("stm.eval_interval", s.eval_interval);

    GanConfig& g = c.gan;
    b.count("gan.latent_dim", g.latent_dim);
    b.counts("gan.generator_hidden", g.generator_hidden);
    b.counts("gan.critic_hidden", g.critic_hidden);
    b.real("gan.critic_slope", g.critic_slope);
    b.real("gan.beta", g.beta);
    b.real("gan.lambda", g.lambda);
    b.real("gan.eps_drift", g.eps_drift);
    b.count("gan.activation_layer", g.activation_layer);
    b.count("gan.steps", g.steps);
    b.count("gan.batch_size", g.batch_size);
    b.optimizer("gan.generator", g.generator_optimizer);
    b.optimizer("gan.critic", g.critic_optimizer);
    f.push_back({"gan.penalty", [&g] { return std::string(g.penalty.mode == ad::PenaltyMode::Exact ? "exact" : "random"); },
                 [&g](const std::string& v) {
                     if (v == "exact") g.penalty.mode = ad::PenaltyMode::Exact;
                     else if (v == "random") g.penalty.mode = ad::PenaltyMode::RandomDirection;
                     else throw std::invalid_argument("gan.penalty must be exact or random, got '" + v + "'");
                 }});
    b.real("gan.penalty_epsilon", g.penalty.epsilon);

    LtmConfig& l = c.ltm;
    b.real("ltm.alpha", l.alpha);
    b.count("ltm.batch_size", l.batch_size);
    b.count("ltm.steps", l.steps);
    b.count("ltm.eval_interval", l.eval_interval);
    b.count("ltm.norm_batches", l.norm_batches);
    b.count("ltm.norm_batch_size", l.norm_batch_size);
    b.optimizer("ltm.optimizer", l.optimizer);

    ScratchConfig& r = c.scratch;
    b.count("scratch.steps", r.steps);
    b.count("scratch.batch_size", r.batch_size);
    b.count("scratch.eval_interval", r.eval_interval);
    b.flag("scratch.normalize", r.normalize);
    b.optimizer("scratch.optimizer", r.optimizer);
    return f;
}

void set_value(ExperimentConfig& config, const std::string& key, const std::string& value)
{
    for (auto& field : config_fields(config)) {
        if (field.key != key) continue;
        try {
            field.set(value);
        } catch (const std::exception& e) {
            throw std::invalid_argument("config key '" + key + "': " + e.what());
        }
        return;
    }
    throw std::invalid_argument("unknown config key '" + key + "'");
}

std::string get_value(const ExperimentConfig& config, const std::string& key)
{
    ExperimentConfig copy = config;
    for (auto& field : config_fields(copy))
        if (field.key == key) return field.get();
    throw std::invalid_argument("unknown config key '" + key + "'");
}

void apply_override(ExperimentConfig& config, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + assignment + "' is not key=value");
    set_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig parse_config(const std::string& text)
{
    ExperimentConfig config;
    std::istringstream in(text);
    std::string line;
    std::string section = "experiment";
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument("line " + std::to_string(number) + ": bad section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(number) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string full = section == "experiment" ? key : section + "." + key;
        try {
            set_value(config, full, trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("line " + std::to_string(number) + ": " + e.what());
        }
    }
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string section_text(const ExperimentConfig& config, const std::string& section)
{
    ExperimentConfig copy = config;
    std::string out;
    for (auto& field : config_fields(copy))
        if (section_of(field.key) == section) out += local_key(field.key) + " = " + field.get() + "\n";
    return out;
}

std::string to_text(const ExperimentConfig& config)
{
    std::string out;
    for (const char* s : {"experiment", "stm", "gan", "ltm", "scratch"}) {
        if (!out.empty()) out += "\n";
        out += "[" + std::string(s) + "]\n" + section_text(config, s);
    }
    return out;
}

void validate(const ExperimentConfig& c)
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("invalid config: " + what);
    };
    require(!c.seeds.empty(), "seeds must not be empty");
    require(!c.tasks.empty(), "tasks must not be empty");
    require(c.eval_episodes >= 1, "eval_episodes must be at least 1");
    require(c.eval_epsilon >= 0.0 && c.eval_epsilon <= 1.0, "eval_epsilon outside [0, 1]");
    require(c.frame_stack >= 1, "frame_stack must be at least 1");
    require(!c.stm.hidden.empty(), "stm.hidden must list at least one layer");
    require(c.stm.eval_interval > 0 && c.stm.frames >= c.stm.eval_interval, "stm.frames < stm.eval_interval");
    require(c.stm.gamma >= 0.0 && c.stm.gamma < 1.0, "stm.gamma outside [0, 1)");
    require(c.gan.activation_layer >= 1 && c.gan.activation_layer <= c.stm.hidden.size(),
            "gan.activation_layer must name a hidden layer of the Q-network");
    require(c.gan.lambda > 0.0 && c.gan.beta >= 0.0 && c.gan.eps_drift >= 0.0, "gan penalty weights");
    require(c.gan.batch_size > 0 && c.gan.latent_dim > 0, "gan sizes must be positive");
    require(c.ltm.alpha >= 0.0 && c.ltm.alpha <= 1.0, "ltm.alpha outside [0, 1]");
    require(c.ltm.eval_interval > 0 && c.ltm.steps >= c.ltm.eval_interval, "ltm.steps < ltm.eval_interval");
    require(c.scratch.eval_interval > 0 && c.scratch.steps >= c.scratch.eval_interval,
            "scratch.steps < scratch.eval_interval");
}

std::vector<TaskSpec> task_specs(const ExperimentConfig& config)
{
    std::vector<TaskSpec> out;
    for (TaskId id : config.tasks) out.push_back(TaskSpec::make(id, config.frame_stack));
    return out;
}

ExperimentConfig quick_config()
{
    ExperimentConfig c;
    c.seeds = {0};
    c.eval_episodes = 4;
    c.stm.hidden = {32, 32};
    c.stm.frames = 2000;
    c.stm.learning_starts = 200;
    c.stm.replay_capacity = 2000;
    c.stm.sync_interval = 500;
    c.stm.eval_interval = 1000;
    c.gan.generator_hidden = {32};
    c.gan.critic_hidden = {32};
    c.gan.latent_dim = 8;
    c.gan.steps = 40;
    c.gan.batch_size = 8;
    c.ltm.steps = 60;
    c.ltm.eval_interval = 30;
    c.ltm.norm_batches = 10;
    c.scratch.steps = 60;
    c.scratch.eval_interval = 30;
    return c;
}

} // namespace grimrepr
