#include "diffrx/numcore/ops.hpp"

#include "diffrx/error.hpp"

#include <algorithm>
#include <cmath>

namespace diffrx::numcore {

namespace {

using detail::Node;

// b[(i / inner) % period] pairs with a[i].
struct Broadcast {
    std::size_t inner = 1;
    std::size_t period = 1;
    bool full = false;
};

Broadcast resolve_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return {1, shape_numel(a), true};
    const std::size_t nb = shape_numel(b);
    if (nb == 1) return {shape_numel(a), 1, false};
    if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.begin())) {
        return {shape_numel(Shape(a.begin() + b.size(), a.end())), nb, false};
    }
    if (b.size() == 1 && a.size() >= 2 && a[1] == b[0]) {
        return {shape_numel(Shape(a.begin() + 2, a.end())), b[0], false};
    }
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                         " are not broadcast-compatible");
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const Broadcast& bc, F f) {
    Tensor out(a.shape());
    const auto av = a.data();
    const auto bv = b.data();
    auto ov = out.data();
    if (bc.full) {
        for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i], bv[i]);
    } else {
        for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i], bv[(i / bc.inner) % bc.period]);
    }
    return out;
}

// Accumulates g (shaped like a) into the broadcast operand's grad.
template <class F>
void reduce_into(Tensor& gb, const Tensor& g, const Broadcast& bc, F weight) {
    auto gv = g.data();
    auto dst = gb.data();
    for (std::size_t i = 0; i < gv.size(); ++i) dst[(i / bc.inner) % bc.period] += gv[i] * weight(i);
}

Scalar sigmoid(Scalar x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

Var add(const Var& a, const Var& b) {
    const Broadcast bc = resolve_broadcast(a.shape(), b.shape(), "add");
    auto an = a.node_ptr(), bn = b.node_ptr();
    return a.graph().emit(zip(a.value(), b.value(), bc, [](Scalar x, Scalar y) { return x + y; }), {&a, &b},
                          [an, bn, bc](Node& out) {
                              if (an->requires_grad) {
                                  auto dst = an->grad_buffer().data();
                                  auto g = out.grad.data();
                                  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                              }
                              if (bn->requires_grad)
                                  reduce_into(bn->grad_buffer(), out.grad, bc, [](std::size_t) { return 1.0; });
                          });
}

Var sub(const Var& a, const Var& b) {
    const Broadcast bc = resolve_broadcast(a.shape(), b.shape(), "sub");
    auto an = a.node_ptr(), bn = b.node_ptr();
    return a.graph().emit(zip(a.value(), b.value(), bc, [](Scalar x, Scalar y) { return x - y; }), {&a, &b},
                          [an, bn, bc](Node& out) {
                              if (an->requires_grad) {
                                  auto dst = an->grad_buffer().data();
                                  auto g = out.grad.data();
                                  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                              }
                              if (bn->requires_grad)
                                  reduce_into(bn->grad_buffer(), out.grad, bc, [](std::size_t) { return -1.0; });
                          });
}

Var mul(const Var& a, const Var& b) {
    const Broadcast bc = resolve_broadcast(a.shape(), b.shape(), "mul");
    auto an = a.node_ptr(), bn = b.node_ptr();
    return a.graph().emit(zip(a.value(), b.value(), bc, [](Scalar x, Scalar y) { return x * y; }), {&a, &b},
                          [an, bn, bc](Node& out) {
                              const auto g = out.grad.data();
                              const auto av = an->value.data();
                              const auto bv = bn->value.data();
                              if (an->requires_grad) {
                                  auto dst = an->grad_buffer().data();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                      dst[i] += g[i] * bv[(i / bc.inner) % bc.period];
                              }
                              if (bn->requires_grad)
                                  reduce_into(bn->grad_buffer(), out.grad, bc, [&](std::size_t i) { return av[i]; });
                          });
}

Var scale(const Var& a, Scalar s) {
    Tensor out = a.value();
    for (auto& v : out.data()) v *= s;
    auto an = a.node_ptr();
    return a.graph().emit(std::move(out), {&a}, [an, s](Node& o) {
        auto dst = an->grad_buffer().data();
        auto g = o.grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * g[i];
    });
}

Var sum(const Var& a) {
    Scalar total = 0.0;
    for (Scalar v : a.value().data()) total += v;
    auto an = a.node_ptr();
    return a.graph().emit(Tensor::scalar(total), {&a}, [an](Node& o) {
        const Scalar g = o.grad[0];
        for (auto& d : an->grad_buffer().data()) d += g;
    });
}

Var mean(const Var& a) {
    return scale(sum(a), 1.0 / static_cast<Scalar>(a.value().numel()));
}

Var relu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    auto xn = x.node_ptr();
    return x.graph().emit(std::move(out), {&x}, [xn](Node& o) {
        auto dst = xn->grad_buffer().data();
        auto g = o.grad.data();
        auto xv = xn->value.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) dst[i] += g[i];
    });
}

Var silu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = v * sigmoid(v);
    auto xn = x.node_ptr();
    return x.graph().emit(std::move(out), {&x}, [xn](Node& o) {
        auto dst = xn->grad_buffer().data();
        auto g = o.grad.data();
        auto xv = xn->value.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Scalar s = sigmoid(xv[i]);
            dst[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
    });
}

Var groupnorm(const Var& x, const Var& gamma, const Var& beta, std::size_t groups, Scalar eps) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw DimensionError("groupnorm: input needs [B,C,...], got " + shape_str(s));
    const std::size_t B = s[0], C = s[1];
    if (groups == 0 || C % groups != 0)
        throw ConfigError("groupnorm: " + std::to_string(C) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw DimensionError("groupnorm: affine params must be [" + std::to_string(C) + "], got " +
                             shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    const std::size_t spatial = shape_numel(s) / (B * C);
    const std::size_t cpg = C / groups;
    const std::size_t n = cpg * spatial;

    Tensor xhat(s);
    std::vector<Scalar> inv_std(B * groups);
    Tensor out(s);
    {
        const auto xv = x.value().data();
        const auto gv = gamma.value().data();
        const auto bv = beta.value().data();
        auto hv = xhat.data();
        auto ov = out.data();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t g = 0; g < groups; ++g) {
                const std::size_t base = (b * C + g * cpg) * spatial;
                Scalar mu = 0.0;
                for (std::size_t i = 0; i < n; ++i) mu += xv[base + i];
                mu /= static_cast<Scalar>(n);
                Scalar var = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const Scalar d = xv[base + i] - mu;
                    var += d * d;
                }
                var /= static_cast<Scalar>(n);
                const Scalar inv = 1.0 / std::sqrt(var + eps);
                inv_std[b * groups + g] = inv;
                for (std::size_t c = 0; c < cpg; ++c) {
                    const std::size_t ch = g * cpg + c;
                    const std::size_t off = base + c * spatial;
                    for (std::size_t i = 0; i < spatial; ++i) {
                        const Scalar h = (xv[off + i] - mu) * inv;
                        hv[off + i] = h;
                        ov[off + i] = h * gv[ch] + bv[ch];
                    }
                }
            }
        }
    }

    auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr();
    return x.graph().emit(
        std::move(out), {&x, &gamma, &beta},
        [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, groups, cpg, spatial, n](Node& o) {
            const auto g = o.grad.data();
            const auto hv = xhat.data();
            const auto gam = gn->value.data();
            if (gn->requires_grad || bn->requires_grad) {
                auto dg = gn->requires_grad ? gn->grad_buffer().data() : std::span<Scalar>{};
                auto db = bn->requires_grad ? bn->grad_buffer().data() : std::span<Scalar>{};
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t off = (b * C + c) * spatial;
                        Scalar sg = 0.0, sb = 0.0;
                        for (std::size_t i = 0; i < spatial; ++i) {
                            sg += g[off + i] * hv[off + i];
                            sb += g[off + i];
                        }
                        if (!dg.empty()) dg[c] += sg;
                        if (!db.empty()) db[c] += sb;
                    }
            }
            if (!xn->requires_grad) return;
            auto dx = xn->grad_buffer().data();
            const Scalar nn = static_cast<Scalar>(n);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t grp = 0; grp < groups; ++grp) {
                    const std::size_t base = (b * C + grp * cpg) * spatial;
                    Scalar sum_dh = 0.0, sum_dh_h = 0.0;
                    for (std::size_t c = 0; c < cpg; ++c) {
                        const Scalar gm = gam[grp * cpg + c];
                        const std::size_t off = base + c * spatial;
                        for (std::size_t i = 0; i < spatial; ++i) {
                            const Scalar dh = g[off + i] * gm;
                            sum_dh += dh;
                            sum_dh_h += dh * hv[off + i];
                        }
                    }
                    const Scalar inv = inv_std[b * groups + grp];
                    for (std::size_t c = 0; c < cpg; ++c) {
                        const Scalar gm = gam[grp * cpg + c];
                        const std::size_t off = base + c * spatial;
                        for (std::size_t i = 0; i < spatial; ++i) {
                            const Scalar dh = g[off + i] * gm;
                            dx[off + i] += inv / nn * (nn * dh - sum_dh - hv[off + i] * sum_dh_h);
                        }
                    }
                }
        });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || b.shape() != Shape{ws[0]})
        throw DimensionError("linear: incompatible shapes x" + shape_str(xs) + " w" + shape_str(ws) + " b" +
                             shape_str(b.shape()));
    const std::size_t B = xs[0], in = xs[1], out_dim = ws[0];
    Tensor out({B, out_dim});
    {
        const auto xv = x.value().data();
        const auto wv = w.value().data();
        const auto bv = b.value().data();
        auto ov = out.data();
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t o = 0; o < out_dim; ++o) {
                Scalar acc = bv[o];
                for (std::size_t i = 0; i < in; ++i) acc += wv[o * in + i] * xv[n * in + i];
                ov[n * out_dim + o] = acc;
            }
    }
    auto xn = x.node_ptr(), wn = w.node_ptr(), bn = b.node_ptr();
    return x.graph().emit(std::move(out), {&x, &w, &b}, [xn, wn, bn, B, in, out_dim](Node& o) {
        const auto g = o.grad.data();
        const auto xv = xn->value.data();
        const auto wv = wn->value.data();
        if (xn->requires_grad) {
            auto dx = xn->grad_buffer().data();
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t k = 0; k < out_dim; ++k) {
                    const Scalar gk = g[n * out_dim + k];
                    for (std::size_t i = 0; i < in; ++i) dx[n * in + i] += gk * wv[k * in + i];
                }
        }
        if (wn->requires_grad) {
            auto dw = wn->grad_buffer().data();
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t k = 0; k < out_dim; ++k) {
                    const Scalar gk = g[n * out_dim + k];
                    for (std::size_t i = 0; i < in; ++i) dw[k * in + i] += gk * xv[n * in + i];
                }
        }
        if (bn->requires_grad) {
            auto db = bn->grad_buffer().data();
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t k = 0; k < out_dim; ++k) db[k] += g[n * out_dim + k];
        }
    });
}

namespace {
struct Spatial {
    std::size_t B, C, H, W;
};

Spatial spatial4(const Shape& s, const char* op) {
    if (s.size() != 4) throw DimensionError(std::string(op) + ": expected [B,C,H,W], got " + shape_str(s));
    return {s[0], s[1], s[2], s[3]};
}
} // namespace

Var avg_pool2(const Var& x) {
    const auto [B, C, H, W] = spatial4(x.shape(), "avg_pool2");
    const std::size_t fh = H > 1 ? 2 : 1, fw = W > 1 ? 2 : 1;
    if (H % fh || W % fw)
        throw DimensionError("avg_pool2: spatial extent " + shape_str(x.shape()) + " not divisible by 2");
    const std::size_t oh = H / fh, ow = W / fw;
    const Scalar w = 1.0 / static_cast<Scalar>(fh * fw);
    Tensor out({B, C, oh, ow});
    const auto xv = x.value().data();
    auto ov = out.data();
    for (std::size_t p = 0; p < B * C; ++p)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                Scalar acc = 0.0;
                for (std::size_t dy = 0; dy < fh; ++dy)
                    for (std::size_t dx = 0; dx < fw; ++dx)
                        acc += xv[(p * H + y * fh + dy) * W + xx * fw + dx];
                ov[(p * oh + y) * ow + xx] = acc * w;
            }
    auto xn = x.node_ptr();
    return x.graph().emit(std::move(out), {&x}, [xn, B, C, H, W, fh, fw, oh, ow, w](Node& o) {
        const auto g = o.grad.data();
        auto dx = xn->grad_buffer().data();
        for (std::size_t p = 0; p < B * C; ++p)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    const Scalar gv = g[(p * oh + y) * ow + xx] * w;
                    for (std::size_t dy = 0; dy < fh; ++dy)
                        for (std::size_t ddx = 0; ddx < fw; ++ddx) dx[(p * H + y * fh + dy) * W + xx * fw + ddx] += gv;
                }
    });
}

Var upsample_nearest(const Var& x, std::size_t out_h, std::size_t out_w) {
    const auto [B, C, H, W] = spatial4(x.shape(), "upsample_nearest");
    if (out_h % H || out_w % W || out_h / H > 2 || out_w / W > 2)
        throw DimensionError("upsample_nearest: cannot map " + shape_str(x.shape()) + " to " + std::to_string(out_h) +
                             "x" + std::to_string(out_w));
    const std::size_t fh = out_h / H, fw = out_w / W;
    Tensor out({B, C, out_h, out_w});
    const auto xv = x.value().data();
    auto ov = out.data();
    for (std::size_t p = 0; p < B * C; ++p)
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t xx = 0; xx < out_w; ++xx) ov[(p * out_h + y) * out_w + xx] = xv[(p * H + y / fh) * W + xx / fw];
    auto xn = x.node_ptr();
    return x.graph().emit(std::move(out), {&x}, [xn, B, C, H, W, fh, fw, out_h, out_w](Node& o) {
        const auto g = o.grad.data();
        auto dx = xn->grad_buffer().data();
        for (std::size_t p = 0; p < B * C; ++p)
            for (std::size_t y = 0; y < out_h; ++y)
                for (std::size_t xx = 0; xx < out_w; ++xx)
                    dx[(p * H + y / fh) * W + xx / fw] += g[(p * out_h + y) * out_w + xx];
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const auto sa = spatial4(a.shape(), "concat_channels");
    const auto sb = spatial4(b.shape(), "concat_channels");
    if (sa.B != sb.B || sa.H != sb.H || sa.W != sb.W)
        throw DimensionError("concat_channels: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                             " differ outside the channel axis");
    const std::size_t plane = sa.H * sa.W;
    const std::size_t C = sa.C + sb.C;
    Tensor out({sa.B, C, sa.H, sa.W});
    const auto av = a.value().data();
    const auto bv = b.value().data();
    auto ov = out.data();
    for (std::size_t n = 0; n < sa.B; ++n) {
        std::copy_n(av.begin() + n * sa.C * plane, sa.C * plane, ov.begin() + n * C * plane);
        std::copy_n(bv.begin() + n * sb.C * plane, sb.C * plane, ov.begin() + (n * C + sa.C) * plane);
    }
    auto an = a.node_ptr(), bn = b.node_ptr();
    return a.graph().emit(std::move(out), {&a, &b}, [an, bn, sa, sb, C, plane](Node& o) {
        const auto g = o.grad.data();
        if (an->requires_grad) {
            auto d = an->grad_buffer().data();
            for (std::size_t n = 0; n < sa.B; ++n)
                for (std::size_t i = 0; i < sa.C * plane; ++i) d[n * sa.C * plane + i] += g[n * C * plane + i];
        }
        if (bn->requires_grad) {
            auto d = bn->grad_buffer().data();
            for (std::size_t n = 0; n < sa.B; ++n)
                for (std::size_t i = 0; i < sb.C * plane; ++i)
                    d[n * sb.C * plane + i] += g[(n * C + sa.C) * plane + i];
        }
    });
}

} // namespace diffrx::numcore
