#pragma once

#include "grimrepr/autodiff.hpp"
#include "grimrepr/checkpoint.hpp"
#include "grimrepr/mlp.hpp"
#include "grimrepr/short_term.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Generative memory: a WGAN-GP with drift term over observations, optionally
// extended with a second critic that sees the observations' hidden-layer
// activations through a frozen Q-network (GRIm mode).

namespace grimrepr {

enum class GanMode : std::uint8_t { RePR, GRIm };

std::string to_string(GanMode m);
GanMode gan_mode_from_string(const std::string& s);

struct GanConfig {
    std::size_t latent_dim = 32;
    std::vector<std::size_t> generator_hidden{128, 128};
    std::vector<std::size_t> critic_hidden{128, 128};
    double critic_slope = 0.2;
    double beta = 1000.0;
    double lambda = 10.0;
    double eps_drift = 1e-6;
    std::size_t activation_layer = 2; // 1-based hidden layer of the frozen Q-network
    std::size_t steps = 20000;        // alternating: odd steps critics, even steps generator
    std::size_t batch_size = 32;
    OptimizerConfig generator_optimizer{OptimizerKind::Adam, 1e-4, 0.0, 0.5, 0.9, 1e-8, 0.0};
    OptimizerConfig critic_optimizer{OptimizerKind::Adam, 1e-4, 0.0, 0.5, 0.9, 1e-8, 0.0};
    ad::GradNormOptions penalty;
};

struct GanBundle {
    GanMode mode = GanMode::RePR;
    Mlp generator; // latent -> observation, tanh output
    Mlp disc1;     // observation -> scalar
    std::optional<Mlp> disc2; // activation -> scalar, GRIm only
    std::size_t latent_dim = 32;
    double beta = 1000.0;
    double lambda = 10.0;
    double eps_drift = 1e-6;
    std::size_t activation_layer = 2;

    /// n generated observations from fresh latent draws.
    Tensor sample(std::size_t n, Rng& rng) const;

    Checkpoint to_checkpoint() const;
    static GanBundle from_checkpoint(const Checkpoint& ckpt);
};

/// Fresh bundle. `activation_size` is the width of the frozen Q-network's
/// chosen hidden layer and is only used in GRIm mode.
GanBundle make_gan(std::size_t observation_size, std::size_t activation_size, GanMode mode, const GanConfig& config,
                   Rng& rng);

/// z ~ U(-1, 1)^{n x d}
Tensor sample_latent(std::size_t n, std::size_t dim, Rng& rng);

/// Post-nonlinearity output of hidden layer `layer` of a frozen network.
Tensor extract_activations(const Tensor& x, const QNetwork& dqn, std::size_t layer);
/// The same inside a graph: gradients reach `x` but never the network's parameters.
ad::Var extract_activations(ad::Graph& graph, ad::Var x, const QNetwork& dqn, std::size_t layer);

/// Critic loss averaged over the batch:
///   D(fake) - D(real) + lambda (||grad D(x_hat)|| - 1)^2 + eps_drift D(real)^2 + eps_drift D(fake)^2
/// with x_hat = mix_eps * real + (1 - mix_eps) * fake, one mix_eps per row.
ad::Var disc_loss(ad::Graph& graph, const Mlp& disc, std::span<const ad::Var> disc_params, const Tensor& real,
                  const Tensor& fake, double lambda, double eps_drift, std::span<const double> mix_eps,
                  const ad::GradNormOptions& penalty = {}, Rng* rng = nullptr);

/// -mean D1(fake)
ad::Var gen_loss_repr(const Mlp& disc1, std::span<const ad::Var> disc1_params, ad::Var fake);

/// -mean D1(fake) - beta mean D2(fake_act). Throws when disc2 is absent.
ad::Var gen_loss_grim(const Mlp& disc1, std::span<const ad::Var> disc1_params, const Mlp* disc2,
                      std::span<const ad::Var> disc2_params, ad::Var fake, ad::Var fake_act, double beta);

struct GanBatch {
    Tensor real;                    // [n, observation]
    Tensor z;                       // [n, latent]
    std::size_t from_previous = 0;  // leading rows drawn from the previous generator
};

/// Real states for training the GAN of task `task_index` (1-based). Task 1
/// draws everything from the replay; later tasks draw (i-1)/i of the batch
/// from the previous generator and the rest from the current replay.
GanBatch compose_gan_batch(const ReplayBuffer& replay, const GanBundle* previous, std::size_t task_index,
                           std::size_t n, std::size_t latent_dim, Rng& rng);

/// Draws n real training items.
using RealSampler = std::function<Tensor(std::size_t, Rng&)>;

struct GanTrainStats {
    std::size_t disc_steps = 0;
    std::size_t gen_steps = 0;
    double last_disc_loss = 0.0;
    double last_disc2_loss = 0.0;
    double last_gen_loss = 0.0;
};

struct GanTrainResult {
    GanBundle bundle;
    GanTrainStats stats;
};

/// Called after every step with the step index (1-based).
using GanObserver = std::function<void(std::size_t, const GanBundle&, const GanTrainStats&)>;

/// Alternate critic and generator updates for config.steps steps. GRIm mode
/// needs the frozen Q-network whose activations feed disc2; it is read only.
/// Throws TrainingAborted with the step index on a non-finite loss.
GanTrainResult train_gan(GanBundle bundle, const RealSampler& real, const QNetwork* frozen_dqn, const GanConfig& config,
                         std::uint64_t seed, const GanObserver& observer = {});

} // namespace grimrepr
