#include "grimrepr/generative_memory.hpp"

#include "grimrepr/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace grimrepr {

std::string to_string(GanMode m) { return m == GanMode::RePR ? "repr" : "grim"; }

GanMode gan_mode_from_string(const std::string& s)
{
    if (s == "repr") return GanMode::RePR;
    if (s == "grim") return GanMode::GRIm;
    throw std::invalid_argument("unknown GAN mode '" + s + "' (expected repr or grim)");
}

namespace {

MlpSpec critic_spec(std::size_t input, const GanConfig& config)
{
    MlpSpec spec;
    spec.sizes.push_back(input);
    spec.sizes.insert(spec.sizes.end(), config.critic_hidden.begin(), config.critic_hidden.end());
    spec.sizes.push_back(1);
    spec.hidden = Activation::LeakyRelu;
    spec.output = Activation::Identity;
    spec.slope = config.critic_slope;
    return spec;
}

std::vector<double> draw_mix(std::size_t n, Rng& rng)
{
    std::vector<double> eps(n);
    for (double& e : eps) e = rng.uniform();
    return eps;
}

} // namespace

Tensor sample_latent(std::size_t n, std::size_t dim, Rng& rng)
{
    Tensor z({n, dim});
    for (double& v : z.data()) v = rng.uniform(-1.0, 1.0);
    return z;
}

Tensor GanBundle::sample(std::size_t n, Rng& rng) const { return generator.predict(sample_latent(n, latent_dim, rng)); }

GanBundle make_gan(std::size_t observation_size, std::size_t activation_size, GanMode mode, const GanConfig& config,
                   Rng& rng)
{
    if (!(config.lambda > 0.0) || config.beta < 0.0 || config.eps_drift < 0.0)
        throw std::invalid_argument("make_gan: lambda must be positive, beta and eps_drift non-negative");
    GanBundle b;
    b.mode = mode;
    b.latent_dim = config.latent_dim;
    b.beta = config.beta;
    b.lambda = config.lambda;
    b.eps_drift = config.eps_drift;
    b.activation_layer = config.activation_layer;

    MlpSpec gen;
    gen.sizes.push_back(config.latent_dim);
    gen.sizes.insert(gen.sizes.end(), config.generator_hidden.begin(), config.generator_hidden.end());
    gen.sizes.push_back(observation_size);
    gen.hidden = Activation::LeakyRelu;
    gen.output = Activation::Tanh;
    gen.slope = config.critic_slope;
    b.generator = Mlp(gen, rng);
    b.disc1 = Mlp(critic_spec(observation_size, config), rng);
    if (mode == GanMode::GRIm) b.disc2 = Mlp(critic_spec(activation_size, config), rng);
    return b;
}

Checkpoint GanBundle::to_checkpoint() const
{
    Checkpoint c;
    c.kind = "gan";
    c.set("mode", to_string(mode));
    c.set("activation_layer", std::to_string(activation_layer));
    c.set("latent_dim", std::to_string(latent_dim));
    c.set_real("beta", beta);
    c.set_real("lambda", lambda);
    c.set_real("eps_drift", eps_drift);
    add_network(c, "generator", generator);
    add_network(c, "disc1", disc1);
    if (disc2) add_network(c, "disc2", *disc2);
    return c;
}

GanBundle GanBundle::from_checkpoint(const Checkpoint& ckpt)
{
    if (ckpt.kind != "gan") throw std::runtime_error("checkpoint kind '" + ckpt.kind + "' is not a GAN bundle");
    GanBundle b;
    b.mode = gan_mode_from_string(ckpt.require("mode"));
    b.activation_layer = static_cast<std::size_t>(std::stoull(ckpt.require("activation_layer")));
    b.latent_dim = static_cast<std::size_t>(std::stoull(ckpt.require("latent_dim")));
    b.beta = ckpt.require_real("beta");
    b.lambda = ckpt.require_real("lambda");
    b.eps_drift = ckpt.require_real("eps_drift");
    b.generator = read_network(ckpt, "generator");
    b.disc1 = read_network(ckpt, "disc1");
    if (b.mode == GanMode::GRIm) b.disc2 = read_network(ckpt, "disc2");
    return b;
}

Tensor extract_activations(const Tensor& x, const QNetwork& dqn, std::size_t layer)
{
    return dqn.activations(x, layer);
}

ad::Var extract_activations(ad::Graph& graph, ad::Var x, const QNetwork& dqn, std::size_t layer)
{
    if (layer < 1 || layer > dqn.hidden_count())
        throw std::out_of_range("extract_activations: layer " + std::to_string(layer) + " is not a hidden layer");
    const auto frozen = dqn.bind(graph, false);
    return dqn.forward_to(graph, x, frozen, layer);
}

ad::Var disc_loss(ad::Graph& graph, const Mlp& disc, std::span<const ad::Var> disc_params, const Tensor& real,
                  const Tensor& fake, double lambda, double eps_drift, std::span<const double> mix_eps,
                  const ad::GradNormOptions& penalty, Rng* rng)
{
    if (real.shape() != fake.shape())
        throw std::invalid_argument("disc_loss: real " + shape_string(real.shape()) + " and fake " +
                                    shape_string(fake.shape()) + " differ");
    if (real.rank() != 2 || mix_eps.size() != real.rows())
        throw std::invalid_argument("disc_loss: need one mix_eps per row");
    Tensor x_hat(real.shape());
    for (std::size_t r = 0; r < real.rows(); ++r) {
        const double e = mix_eps[r];
        if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("disc_loss: mix_eps outside [0, 1]");
        for (std::size_t c = 0; c < real.cols(); ++c) x_hat.at(r, c) = e * real.at(r, c) + (1.0 - e) * fake.at(r, c);
    }

    const ad::RowFunction critic = [&](ad::Var x) { return disc.forward(graph, x, disc_params); };
    const ad::Var d_real = critic(graph.constant(real));
    const ad::Var d_fake = critic(graph.constant(fake));
    const ad::Var norm = ad::input_gradient_norm(graph, critic, x_hat, penalty, rng);
    const ad::Var gp = ad::scale(ad::square(ad::add_scalar(norm, -1.0)), lambda);
    const ad::Var drift = ad::scale(ad::add(ad::square(d_real), ad::square(d_fake)), eps_drift);
    return ad::mean(ad::add(ad::add(ad::sub(d_fake, d_real), gp), drift));
}

ad::Var gen_loss_repr(const Mlp& disc1, std::span<const ad::Var> disc1_params, ad::Var fake)
{
    return ad::scale(ad::mean(disc1.forward(*fake.graph, fake, disc1_params)), -1.0);
}

ad::Var gen_loss_grim(const Mlp& disc1, std::span<const ad::Var> disc1_params, const Mlp* disc2,
                      std::span<const ad::Var> disc2_params, ad::Var fake, ad::Var fake_act, double beta)
{
    if (disc2 == nullptr) throw std::invalid_argument("gen_loss_grim: second discriminator absent; use gen_loss_repr");
    ad::Graph& g = *fake.graph;
    const ad::Var first = ad::mean(disc1.forward(g, fake, disc1_params));
    const ad::Var second = ad::mean(disc2->forward(g, fake_act, disc2_params));
    return ad::sub(ad::scale(first, -1.0), ad::scale(second, beta));
}

GanBatch compose_gan_batch(const ReplayBuffer& replay, const GanBundle* previous, std::size_t task_index,
                           std::size_t n, std::size_t latent_dim, Rng& rng)
{
    if (task_index == 0) throw std::invalid_argument("compose_gan_batch: task index is 1-based");
    if (replay.empty()) throw std::invalid_argument("compose_gan_batch: empty replay buffer");
    if ((previous != nullptr) != (task_index >= 2))
        throw std::invalid_argument("compose_gan_batch: previous generator required exactly when task index >= 2");

    GanBatch batch;
    batch.real = Tensor({n, replay.observation_size()});
    batch.from_previous = previous ? n * (task_index - 1) / task_index : 0;
    if (batch.from_previous > 0) {
        const Tensor old = previous->sample(batch.from_previous, rng);
        if (old.cols() != replay.observation_size())
            throw std::invalid_argument("compose_gan_batch: previous generator output size mismatch");
        for (std::size_t r = 0; r < batch.from_previous; ++r)
            std::copy(old.row(r).begin(), old.row(r).end(), batch.real.row(r).begin());
    }
    std::vector<std::size_t> idx(n - batch.from_previous);
    for (std::size_t& i : idx) i = rng.index(replay.size());
    const Tensor fresh = replay.states(idx);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(fresh.row(r).begin(), fresh.row(r).end(), batch.real.row(batch.from_previous + r).begin());
    batch.z = sample_latent(n, latent_dim, rng);
    return batch;
}

GanTrainResult train_gan(GanBundle bundle, const RealSampler& real, const QNetwork* frozen_dqn, const GanConfig& config,
                         std::uint64_t seed, const GanObserver& observer)
{
    const bool grim = bundle.mode == GanMode::GRIm;
    if (grim != (frozen_dqn != nullptr))
        throw std::invalid_argument("train_gan: a frozen Q-network is required exactly in GRIm mode");
    if (grim && !bundle.disc2) throw std::invalid_argument("train_gan: GRIm bundle without second discriminator");
    if (grim && frozen_dqn->hidden_size(bundle.activation_layer) != bundle.disc2->input_dim())
        throw std::invalid_argument("train_gan: second discriminator input does not match activation width");
    if (config.batch_size == 0) throw std::invalid_argument("train_gan: batch size must be positive");

    // Separate streams keep the disc1/generator trajectory independent of disc2.
    Rng data_rng(mix_seed(seed, 21));
    Rng z_rng(mix_seed(seed, 22));
    Rng mix1_rng(mix_seed(seed, 23));
    Rng mix2_rng(mix_seed(seed, 24));

    Optimizer gen_opt(config.generator_optimizer);
    Optimizer d1_opt(config.critic_optimizer);
    Optimizer d2_opt(config.critic_optimizer);
    GanTrainStats stats;
    const std::size_t n = config.batch_size;
    const std::size_t layer = bundle.activation_layer;

    auto apply = [](const char* what, std::size_t step, ad::Graph& g, ad::Var loss, const std::vector<ad::Var>& params,
                    std::vector<Tensor>& target, Optimizer& opt) {
        const double lv = loss.value().item();
        std::vector<Tensor> grads = collect(g.backward(loss), params);
        if (!std::isfinite(lv) || !all_finite(grads)) throw TrainingAborted("gan", step, std::string("non-finite ") + what);
        opt.step(target, std::move(grads));
        return lv;
    };

    for (std::size_t step = 1; step <= config.steps; ++step) {
        if (step % 2 == 1) {
            const Tensor x = real(n, data_rng);
            const Tensor fake = bundle.generator.predict(sample_latent(n, bundle.latent_dim, z_rng));
            {
                ad::Graph g;
                const auto p = bundle.disc1.bind(g, true);
                const ad::Var loss = disc_loss(g, bundle.disc1, p, x, fake, bundle.lambda, bundle.eps_drift,
                                               draw_mix(n, mix1_rng), config.penalty, &mix1_rng);
                stats.last_disc_loss = apply("critic loss", step, g, loss, p, bundle.disc1.params(), d1_opt);
            }
            if (grim) {
                const Tensor a = extract_activations(x, *frozen_dqn, layer);
                const Tensor a_fake = extract_activations(fake, *frozen_dqn, layer);
                ad::Graph g;
                const auto p = bundle.disc2->bind(g, true);
                const ad::Var loss = disc_loss(g, *bundle.disc2, p, a, a_fake, bundle.lambda, bundle.eps_drift,
                                               draw_mix(n, mix2_rng), config.penalty, &mix2_rng);
                stats.last_disc2_loss = apply("activation critic loss", step, g, loss, p, bundle.disc2->params(), d2_opt);
            }
            ++stats.disc_steps;
        } else {
            ad::Graph g;
            const auto pg = bundle.generator.bind(g, true);
            const ad::Var z = g.constant(sample_latent(n, bundle.latent_dim, z_rng));
            const ad::Var fake = bundle.generator.forward(g, z, pg);
            const auto p1 = bundle.disc1.bind(g, false);
            ad::Var loss;
            if (grim) {
                const ad::Var act = extract_activations(g, fake, *frozen_dqn, layer);
                const auto p2 = bundle.disc2->bind(g, false);
                loss = gen_loss_grim(bundle.disc1, p1, &*bundle.disc2, p2, fake, act, bundle.beta);
            } else {
                loss = gen_loss_repr(bundle.disc1, p1, fake);
            }
            stats.last_gen_loss = apply("generator loss", step, g, loss, pg, bundle.generator.params(), gen_opt);
            ++stats.gen_steps;
        }
        if (observer) observer(step, bundle, stats);
    }
    return {std::move(bundle), stats};
}

} // namespace grimrepr
