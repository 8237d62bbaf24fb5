#pragma once

#include "diffrx/numcore/autograd.hpp"
#include "diffrx/numcore/checkpoint.hpp"
#include "diffrx/pilots.hpp"
#include "diffrx/resource_grid.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace diffrx::denoiser {

using numcore::Parameter;
using numcore::Tensor;
using numcore::Var;

// Input channel order: [x_t.re, x_t.im, ls.re, ls.im, 1 - mask].
inline constexpr std::size_t kConditionChannels = 5;
inline constexpr std::size_t kOutputChannels = 2;

struct DenoiserConfig {
    std::size_t base_channels = 32;
    std::size_t depth = 2;
    std::size_t kernel = 3;
    std::size_t time_embed_dim = 64;
    std::size_t groups = 8;
    std::size_t in_channels = kConditionChannels;
    std::size_t out_channels = kOutputChannels;
    // With x_skip the network body F is combined with the noisy input as
    // eps_hat = sqrt(1 - abar_t) x_t + sqrt(abar_t) F, abar from the linear
    // training schedule below.
    bool x_skip = true;
    std::size_t schedule_T = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;

    void validate() const;
    // Feature width at encoder level i (the bottleneck reuses the deepest one).
    std::size_t width(std::size_t level) const { return base_channels << level; }

    friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

// Sinusoidal embedding: [sin(t w_0) .. sin(t w_{d/2-1}), cos(t w_0) ..],
// w_i = 10000^(-2i/d).
std::vector<double> time_embedding(double t, std::size_t dim);

// [5, K, M] network input for one grid.
Tensor build_condition(const pilots::PilotObservation& obs, const ResourceGrid& x_t);

// Padded grid extents the network runs on. An axis of extent 1 is left
// alone; any other axis is zero-padded up to a multiple of 2^depth.
struct GridLayout {
    std::size_t K = 0, M = 0;
    std::size_t padded_K = 0, padded_M = 0;

    static GridLayout for_grid(std::size_t K, std::size_t M, std::size_t depth);
    bool padded() const { return K != padded_K || M != padded_M; }
};

// Stacks [5,K,M] conditions into a zero-padded [B,5,pK,pM] batch.
Tensor batch_conditions(std::span<const Tensor> conds, const GridLayout& layout);
// Crops sample b of a [B,2,pK,pM] network output back to a K x M grid.
ResourceGrid output_grid(const Tensor& out, std::size_t b, const GridLayout& layout);

// Conditional encoder-decoder epsilon predictor.
class Denoiser {
public:
    explicit Denoiser(const DenoiserConfig& cfg, std::uint64_t seed = 0);

    const DenoiserConfig& config() const noexcept { return cfg_; }
    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const;

    // Records the forward pass on g. cond: [B,5,H,W]; timesteps: B entries.
    Var forward(numcore::Graph& g, const Var& cond, std::span<const std::size_t> timesteps);

    // Inference-only forward (nothing recorded). Returns [B,2,H,W].
    Tensor predict(const Tensor& cond, std::span<const std::size_t> timesteps) const;

    // Config echo (meta.*) followed by every parameter.
    std::vector<numcore::NamedTensor> to_named_tensors() const;
    // Rebuilds from a checkpoint; throws ConfigError on config or shape mismatch.
    static Denoiser from_named_tensors(const std::vector<numcore::NamedTensor>& tensors);

private:
    static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

    // Pre-norm residual block; skip_* is a 1x1 conv when widths differ.
    struct Block {
        std::size_t gn1_g, gn1_b, conv1_w, conv1_b;
        std::size_t proj_w, proj_b;
        std::size_t gn2_g, gn2_b, conv2_w, conv2_b;
        std::size_t skip_w = kNone, skip_b = kNone;
    };

    template <class Bind>
    Var run(numcore::Graph& g, const Var& cond, std::span<const std::size_t> timesteps, Bind bind) const;
    template <class Bind>
    Var run_block(const Block& blk, const Var& x, const Var& temb, Bind& bind) const;

    std::size_t add_param(std::string name, numcore::Shape shape);
    Block add_block(const std::string& prefix, std::size_t cin, std::size_t cout);

    DenoiserConfig cfg_;
    std::vector<Parameter> params_;
    std::size_t t1_w_ = 0, t1_b_ = 0, t2_w_ = 0, t2_b_ = 0;
    std::vector<Block> enc_;
    Block mid_{};
    std::vector<Block> dec_;
    std::vector<double> alpha_bar_;
    std::size_t in_w_ = 0, in_b_ = 0;
    std::size_t out_gn_g_ = 0, out_gn_b_ = 0, out_w_ = 0, out_b_ = 0;
};

// Re-draws every parameter (including the zero-initialized output conv)
// uniformly in [-scale, scale]. Used for gradient checks.
void randomize_parameters(Denoiser& net, std::uint64_t seed, double scale);

} // namespace diffrx::denoiser
