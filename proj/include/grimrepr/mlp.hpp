#pragma once

#include "grimrepr/autodiff.hpp"
#include "grimrepr/rng.hpp"
#include "grimrepr/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace grimrepr {

enum class Activation : std::uint8_t { Identity, LeakyRelu, Tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct MlpSpec {
    std::vector<std::size_t> sizes; // input, hidden..., output
    Activation hidden = Activation::LeakyRelu;
    Activation output = Activation::Identity;
    double slope = 0.01; // leaky-rectifier negative slope

    bool operator==(const MlpSpec&) const = default;
};

/// Fully connected network. Parameters are stored as [W0, b0, W1, b1, ...]
/// with W_l shaped [in,out].
class Mlp {
public:
    Mlp() = default;
    /// He-uniform hidden weights, Glorot-uniform output weights, zero biases.
    Mlp(MlpSpec spec, Rng& rng);
    /// All parameters zero.
    static Mlp zeros(MlpSpec spec);

    const MlpSpec& spec() const { return spec_; }
    std::size_t input_dim() const { return spec_.sizes.front(); }
    std::size_t output_dim() const { return spec_.sizes.back(); }
    std::size_t layer_count() const { return spec_.sizes.size() - 1; }
    std::size_t hidden_count() const { return spec_.sizes.size() - 2; }
    /// Width of hidden layer `layer` (1-based).
    std::size_t hidden_size(std::size_t layer) const;

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    std::vector<std::string> param_names() const;
    std::size_t parameter_count() const;

    /// Register the parameters as leaves of `graph`.
    std::vector<ad::Var> bind(ad::Graph& graph, bool trainable) const;

    ad::Var forward(ad::Graph& graph, ad::Var x, std::span<const ad::Var> bound) const;
    /// Post-nonlinearity output of hidden layer `layer` (1-based).
    ad::Var forward_to(ad::Graph& graph, ad::Var x, std::span<const ad::Var> bound, std::size_t layer) const;

    /// Graph-free inference; bit-identical to forward().
    Tensor predict(const Tensor& x) const;
    Tensor activations(const Tensor& x, std::size_t layer) const;

    /// FNV-1a over the raw parameter bytes.
    std::uint64_t fingerprint() const;
    bool identical(const Mlp& other) const;

private:
    void check_layer(std::size_t layer) const;
    Tensor run(const Tensor& x, std::size_t affine_layers) const;

    MlpSpec spec_;
    std::vector<Tensor> params_;
};

enum class OptimizerKind : std::uint8_t { Sgd, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Sgd;
    double lr = 1e-3;
    double momentum = 0.9; // SGD
    double beta1 = 0.9;    // Adam
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0; // global gradient-norm clip; 0 disables
};

OptimizerKind optimizer_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config) : config_(config) {}

    void step(std::vector<Tensor>& params, std::vector<Tensor> grads);
    const OptimizerConfig& config() const { return config_; }
    std::size_t steps() const { return steps_; }

private:
    OptimizerConfig config_;
    std::vector<Tensor> first_;
    std::vector<Tensor> second_;
    std::size_t steps_ = 0;
};

double global_norm(std::span<const Tensor> tensors);

/// Gradients for `bound` leaves, in order.
std::vector<Tensor> collect(const ad::GradMap& grads, std::span<const ad::Var> bound);

bool all_finite(std::span<const Tensor> tensors);

} // namespace grimrepr
