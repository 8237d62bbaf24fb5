#include "diffrx/denoiser.hpp"

#include "diffrx/diffusion.hpp"
#include "diffrx/error.hpp"
#include "diffrx/numcore/ops.hpp"
#include "diffrx/rng.hpp"

#include <cmath>
#include <string>

namespace diffrx::denoiser {

namespace nc = numcore;

void DenoiserConfig::validate() const {
    if (in_channels != kConditionChannels)
        throw ConfigError("denoiser.in_channels must be 5 (noisy CFR re/im, LS re/im, inverse mask)");
    if (out_channels != kOutputChannels) throw ConfigError("denoiser.out_channels must be 2");
    if (base_channels == 0 || depth == 0) throw ConfigError("denoiser.base_channels and depth must be > 0");
    if (kernel % 2 == 0) throw ConfigError("denoiser.kernel must be odd");
    if (time_embed_dim == 0 || time_embed_dim % 2 != 0) throw ConfigError("denoiser.time_embed_dim must be even");
    if (schedule_T < 1 || !(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw ConfigError("denoiser schedule must satisfy T >= 1 and 0 < beta_min <= beta_max < 1");
    auto divides = [&](std::size_t c) { return groups != 0 && c % groups == 0; };
    for (std::size_t l = 0; l < depth; ++l) {
        const std::size_t below = l + 1 < depth ? width(l + 1) : width(l);
        if (!divides(width(l)) || !divides(below + width(l)))
            throw ConfigError("denoiser.groups must divide every level width");
    }
}

std::vector<double> time_embedding(double t, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw ConfigError("time embedding dim must be even, got " + std::to_string(dim));
    if (t < 0.0) throw UsageError("time embedding needs t >= 0");
    const std::size_t half = dim / 2;
    std::vector<double> e(dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        e[i] = std::sin(t * w);
        e[half + i] = std::cos(t * w);
    }
    return e;
}

Tensor build_condition(const pilots::PilotObservation& obs, const ResourceGrid& x_t) {
    require_same_dims(obs.ls, x_t, "build_condition");
    if (obs.mask.subcarriers() != x_t.subcarriers() || obs.mask.symbols() != x_t.symbols())
        throw DimensionError("build_condition: mask dims do not match the grid");
    const std::size_t K = x_t.subcarriers(), M = x_t.symbols(), n = K * M;
    Tensor c({kConditionChannels, K, M});
    auto d = c.data();
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = x_t.re()[i];
        d[n + i] = x_t.im()[i];
        d[2 * n + i] = obs.ls.re()[i];
        d[3 * n + i] = obs.ls.im()[i];
        d[4 * n + i] = obs.mask.is_pilot(i) ? 0.0 : 1.0;
    }
    return c;
}

GridLayout GridLayout::for_grid(std::size_t K, std::size_t M, std::size_t depth) {
    const std::size_t q = std::size_t{1} << depth;
    auto up = [q](std::size_t n) { return n == 1 ? n : (n + q - 1) / q * q; };
    return {K, M, up(K), up(M)};
}

Tensor batch_conditions(std::span<const Tensor> conds, const GridLayout& layout) {
    const std::size_t B = conds.size();
    const std::size_t pK = layout.padded_K, pM = layout.padded_M;
    Tensor out({B, kConditionChannels, pK, pM});
    auto d = out.data();
    for (std::size_t b = 0; b < B; ++b) {
        if (conds[b].shape() != nc::Shape{kConditionChannels, layout.K, layout.M})
            throw DimensionError("batch_conditions: condition " + nc::shape_str(conds[b].shape()) +
                                 " does not match layout");
        const auto s = conds[b].data();
        for (std::size_t c = 0; c < kConditionChannels; ++c)
            for (std::size_t k = 0; k < layout.K; ++k)
                for (std::size_t m = 0; m < layout.M; ++m)
                    d[((b * kConditionChannels + c) * pK + k) * pM + m] = s[(c * layout.K + k) * layout.M + m];
    }
    return out;
}

ResourceGrid output_grid(const Tensor& out, std::size_t b, const GridLayout& layout) {
    const std::size_t pK = layout.padded_K, pM = layout.padded_M;
    if (out.rank() != 4 || out.dim(1) != kOutputChannels || out.dim(2) != pK || out.dim(3) != pM || b >= out.dim(0))
        throw DimensionError("output_grid: network output " + nc::shape_str(out.shape()) + " does not match layout");
    ResourceGrid g(layout.K, layout.M);
    const auto d = out.data();
    for (std::size_t k = 0; k < layout.K; ++k)
        for (std::size_t m = 0; m < layout.M; ++m) {
            g.re()[k * layout.M + m] = d[((b * 2 + 0) * pK + k) * pM + m];
            g.im()[k * layout.M + m] = d[((b * 2 + 1) * pK + k) * pM + m];
        }
    return g;
}

std::size_t Denoiser::add_param(std::string name, nc::Shape shape) {
    params_.push_back({std::move(name), nc::Tensor(std::move(shape), 0.0), {}});
    return params_.size() - 1;
}

Denoiser::Block Denoiser::add_block(const std::string& prefix, std::size_t cin, std::size_t cout) {
    const std::size_t k = cfg_.kernel;
    Block b{};
    b.gn1_g = add_param(prefix + ".gn1.gamma", {cin});
    b.gn1_b = add_param(prefix + ".gn1.beta", {cin});
    b.conv1_w = add_param(prefix + ".conv1.w", {cout, cin, k, k});
    b.conv1_b = add_param(prefix + ".conv1.b", {cout});
    b.proj_w = add_param(prefix + ".temb_proj.w", {cout, cfg_.time_embed_dim});
    b.proj_b = add_param(prefix + ".temb_proj.b", {cout});
    b.gn2_g = add_param(prefix + ".gn2.gamma", {cout});
    b.gn2_b = add_param(prefix + ".gn2.beta", {cout});
    b.conv2_w = add_param(prefix + ".conv2.w", {cout, cout, k, k});
    b.conv2_b = add_param(prefix + ".conv2.b", {cout});
    if (cin != cout) {
        b.skip_w = add_param(prefix + ".skip.w", {cout, cin, 1, 1});
        b.skip_b = add_param(prefix + ".skip.b", {cout});
    }
    return b;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const auto sched = diffusion::linear_schedule(cfg_.schedule_T, cfg_.beta_min, cfg_.beta_max);
    for (std::size_t t = 0; t <= cfg_.schedule_T; ++t) alpha_bar_.push_back(sched.alpha_bar(t));
    const std::size_t D = cfg_.time_embed_dim, k = cfg_.kernel;
    params_.reserve(24 + 12 * (2 * cfg_.depth + 1));
    t1_w_ = add_param("temb.fc1.w", {D, D});
    t1_b_ = add_param("temb.fc1.b", {D});
    t2_w_ = add_param("temb.fc2.w", {D, D});
    t2_b_ = add_param("temb.fc2.b", {D});
    in_w_ = add_param("in.conv.w", {cfg_.width(0), cfg_.in_channels, k, k});
    in_b_ = add_param("in.conv.b", {cfg_.width(0)});
    std::size_t cin = cfg_.width(0);
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
        enc_.push_back(add_block("enc" + std::to_string(l), cin, cfg_.width(l)));
        cin = cfg_.width(l);
    }
    mid_ = add_block("mid", cin, cin);
    dec_.resize(cfg_.depth);
    for (std::size_t l = cfg_.depth; l-- > 0;) {
        dec_[l] = add_block("dec" + std::to_string(l), cin + cfg_.width(l), cfg_.width(l));
        cin = cfg_.width(l);
    }
    out_gn_g_ = add_param("out.gn.gamma", {cin});
    out_gn_b_ = add_param("out.gn.beta", {cin});
    out_w_ = add_param("out.conv.w", {cfg_.out_channels, cin, k, k});
    out_b_ = add_param("out.conv.b", {cfg_.out_channels});

    // Fan-in scaled uniform init; norm affines at identity; output conv zero.
    Rng rng(seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = params_[i];
        if (i == out_w_ || i == out_b_) continue;
        if (p.name.ends_with(".gamma")) {
            p.value.fill(1.0);
            continue;
        }
        if (p.name.ends_with(".beta")) continue;
        std::size_t fan_in = 1;
        if (p.name.ends_with(".w")) {
            for (std::size_t a = 1; a < p.value.rank(); ++a) fan_in *= p.value.dim(a);
        } else {
            // bias: fan-in of the matching weight
            const Parameter& w = params_[i - 1];
            for (std::size_t a = 1; a < w.value.rank(); ++a) fan_in *= w.value.dim(a);
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : p.value.data()) v = rng.uniform(-bound, bound);
    }
}

std::size_t Denoiser::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

template <class Bind>
Var Denoiser::run_block(const Block& blk, const Var& x, const Var& temb, Bind& bind) const {
    Var h = nc::silu(nc::groupnorm(x, bind(blk.gn1_g), bind(blk.gn1_b), cfg_.groups));
    h = nc::conv2d(h, bind(blk.conv1_w), bind(blk.conv1_b));
    h = nc::add(h, nc::linear(temb, bind(blk.proj_w), bind(blk.proj_b)));
    h = nc::silu(nc::groupnorm(h, bind(blk.gn2_g), bind(blk.gn2_b), cfg_.groups));
    h = nc::conv2d(h, bind(blk.conv2_w), bind(blk.conv2_b));
    const Var skip = blk.skip_w == kNone ? x : nc::conv2d(x, bind(blk.skip_w), bind(blk.skip_b));
    return nc::add(skip, h);
}

template <class Bind>
Var Denoiser::run(nc::Graph& g, const Var& cond, std::span<const std::size_t> timesteps, Bind bind) const {
    const nc::Shape& s = cond.shape();
    if (s.size() != 4 || s[1] != cfg_.in_channels)
        throw DimensionError("denoiser input must be [B,5,K,M], got " + nc::shape_str(s));
    if (timesteps.size() != s[0])
        throw DimensionError("denoiser got " + std::to_string(timesteps.size()) + " timesteps for batch " +
                             std::to_string(s[0]));
    const std::size_t q = std::size_t{1} << cfg_.depth;
    for (std::size_t axis : {2, 3})
        if (s[axis] > 1 && s[axis] % q != 0)
            throw ConfigError("grid extent " + std::to_string(s[axis]) + " is not divisible by 2^depth = " +
                              std::to_string(q) + "; pad the grid first");

    for (std::size_t t : timesteps)
        if (t > cfg_.schedule_T)
            throw UsageError("timestep " + std::to_string(t) + " exceeds the schedule length " +
                             std::to_string(cfg_.schedule_T));
    const std::size_t B = s[0], D = cfg_.time_embed_dim;
    nc::Tensor emb({B, D});
    for (std::size_t b = 0; b < B; ++b) {
        const auto e = time_embedding(static_cast<double>(timesteps[b]), D);
        std::copy(e.begin(), e.end(), emb.data().begin() + static_cast<std::ptrdiff_t>(b * D));
    }
    Var temb = nc::linear(g.constant(std::move(emb)), bind(t1_w_), bind(t1_b_));
    temb = nc::linear(nc::silu(temb), bind(t2_w_), bind(t2_b_));
    temb = nc::silu(temb);

    Var x = nc::conv2d(cond, bind(in_w_), bind(in_b_));
    std::vector<Var> skips;
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
        x = run_block(enc_[l], x, temb, bind);
        skips.push_back(x);
        x = nc::avg_pool2(x);
    }
    x = run_block(mid_, x, temb, bind);
    for (std::size_t l = cfg_.depth; l-- > 0;) {
        const Var& skip = skips[l];
        x = nc::upsample_nearest(x, skip.shape()[2], skip.shape()[3]);
        x = nc::concat_channels(x, skip);
        x = run_block(dec_[l], x, temb, bind);
    }
    x = nc::silu(nc::groupnorm(x, bind(out_gn_g_), bind(out_gn_b_), cfg_.groups));
    x = nc::conv2d(x, bind(out_w_), bind(out_b_));
    if (!cfg_.x_skip) return x;

    const std::size_t plane = s[2] * s[3];
    nc::Tensor gain({B});
    nc::Tensor skip({B, cfg_.out_channels, s[2], s[3]});
    const auto c = cond.value().data();
    for (std::size_t b = 0; b < B; ++b) {
        const double ab = alpha_bar_[timesteps[b]];
        gain[b] = std::sqrt(ab);
        for (std::size_t i = 0; i < cfg_.out_channels * plane; ++i)
            skip[b * cfg_.out_channels * plane + i] = std::sqrt(1.0 - ab) * c[b * s[1] * plane + i];
    }
    return nc::add(nc::mul(x, g.constant(std::move(gain))), g.constant(std::move(skip)));
}

Var Denoiser::forward(nc::Graph& g, const Var& cond, std::span<const std::size_t> timesteps) {
    return run(g, cond, timesteps, [&](std::size_t i) { return g.parameter(params_[i]); });
}

Tensor Denoiser::predict(const Tensor& cond, std::span<const std::size_t> timesteps) const {
    nc::Graph g(false);
    Var out = run(g, g.constant(cond), timesteps, [&](std::size_t i) { return g.constant(params_[i].value); });
    return out.value();
}

namespace {
nc::NamedTensor meta(const std::string& key, double v) { return {"meta." + key, nc::Tensor::scalar(v)}; }

double meta_real(const std::vector<nc::NamedTensor>& ts, const std::string& key) {
    const auto* t = nc::find_tensor(ts, "meta." + key);
    if (!t) throw ConfigError("checkpoint lacks meta." + key);
    return t->tensor.item();
}

std::size_t meta_value(const std::vector<nc::NamedTensor>& ts, const std::string& key) {
    return static_cast<std::size_t>(meta_real(ts, key));
}
} // namespace

std::vector<nc::NamedTensor> Denoiser::to_named_tensors() const {
    std::vector<nc::NamedTensor> out{
        meta("base_channels", static_cast<double>(cfg_.base_channels)),
        meta("depth", static_cast<double>(cfg_.depth)),
        meta("kernel", static_cast<double>(cfg_.kernel)),
        meta("time_embed_dim", static_cast<double>(cfg_.time_embed_dim)),
        meta("groups", static_cast<double>(cfg_.groups)),
        meta("in_channels", static_cast<double>(cfg_.in_channels)),
        meta("out_channels", static_cast<double>(cfg_.out_channels)),
        meta("x_skip", cfg_.x_skip ? 1.0 : 0.0),
        meta("schedule_T", static_cast<double>(cfg_.schedule_T)),
        meta("beta_min", cfg_.beta_min),
        meta("beta_max", cfg_.beta_max),
    };
    for (const auto& p : params_) out.push_back({"param." + p.name, p.value});
    return out;
}

Denoiser Denoiser::from_named_tensors(const std::vector<nc::NamedTensor>& tensors) {
    DenoiserConfig cfg;
    cfg.base_channels = meta_value(tensors, "base_channels");
    cfg.depth = meta_value(tensors, "depth");
    cfg.kernel = meta_value(tensors, "kernel");
    cfg.time_embed_dim = meta_value(tensors, "time_embed_dim");
    cfg.groups = meta_value(tensors, "groups");
    cfg.in_channels = meta_value(tensors, "in_channels");
    cfg.out_channels = meta_value(tensors, "out_channels");
    cfg.x_skip = meta_real(tensors, "x_skip") != 0.0;
    cfg.schedule_T = meta_value(tensors, "schedule_T");
    cfg.beta_min = meta_real(tensors, "beta_min");
    cfg.beta_max = meta_real(tensors, "beta_max");
    Denoiser net(cfg, 0);
    for (auto& p : net.params_) {
        const auto* t = nc::find_tensor(tensors, "param." + p.name);
        if (!t) throw ConfigError("checkpoint lacks parameter '" + p.name + "'");
        if (t->tensor.shape() != p.value.shape())
            throw ConfigError("checkpoint parameter '" + p.name + "' has shape " + nc::shape_str(t->tensor.shape()) +
                              ", config expects " + nc::shape_str(p.value.shape()));
        if (!t->tensor.all_finite()) throw NumericalError("checkpoint parameter '" + p.name + "' is not finite");
        p.value = t->tensor;
    }
    return net;
}

void randomize_parameters(Denoiser& net, std::uint64_t seed, double scale) {
    Rng rng(seed);
    for (auto& p : net.parameters())
        for (auto& v : p.value.data()) v = rng.uniform(-scale, scale);
}

} // namespace diffrx::denoiser
