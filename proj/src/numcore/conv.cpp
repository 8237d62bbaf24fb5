#include "diffrx/numcore/ops.hpp"

#include "diffrx/error.hpp"

#include <Eigen/Core>

#include <algorithm>

namespace diffrx::numcore {

namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Tap {
    std::ptrdiff_t dy, dx;
    std::size_t index;  // ky * k + kx
};

// Calls f(out_offset, in_offset, length) for every contiguous run of output
// positions whose input position (y+dy, x+dx) lies inside the H x W plane.
template <class F>
inline void for_each_run(std::ptrdiff_t H, std::ptrdiff_t W, std::ptrdiff_t dy, std::ptrdiff_t dx, F&& f) {
    const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(H, H - dy);
    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(W, W - dx);
    if (y0 >= y1 || x0 >= x1) return;
    if (dx == 0) {
        f(y0 * W, (y0 + dy) * W, (y1 - y0) * W);
        return;
    }
    for (std::ptrdiff_t y = y0; y < y1; ++y) f(y * W + x0, (y + dy) * W + x0 + dx, x1 - x0);
}

// Kernel taps that touch at least one in-bounds input; the rest only ever
// multiply zero padding (e.g. off-centre columns when W == 1).
std::vector<Tap> live_taps(std::size_t k, std::size_t H, std::size_t W) {
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    std::vector<Tap> taps;
    for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
            if (std::abs(dy) < static_cast<std::ptrdiff_t>(H) && std::abs(dx) < static_cast<std::ptrdiff_t>(W))
                taps.push_back({dy, dx, ky * k + kx});
        }
    return taps;
}

// cols[ci * T + j, p] = x[ci, p + shift_j] (0 outside the plane)
void im2col(const Scalar* x, std::size_t Cin, std::size_t H, std::size_t W, const std::vector<Tap>& taps,
            Scalar* cols) {
    const std::size_t P = H * W;
    const auto sH = static_cast<std::ptrdiff_t>(H), sW = static_cast<std::ptrdiff_t>(W);
    for (std::size_t ci = 0; ci < Cin; ++ci)
        for (std::size_t j = 0; j < taps.size(); ++j) {
            Scalar* row = cols + (ci * taps.size() + j) * P;
            const Scalar* in = x + ci * P;
            if (taps[j].dx == 0) {
                // single run: zero only the rows that fall off the plane
                const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -taps[j].dy);
                const std::ptrdiff_t y1 = std::min(sH, sH - taps[j].dy);
                std::fill(row, row + y0 * sW, 0.0);
                std::copy(in + (y0 + taps[j].dy) * sW, in + (y1 + taps[j].dy) * sW, row + y0 * sW);
                std::fill(row + y1 * sW, row + P, 0.0);
                continue;
            }
            std::fill(row, row + P, 0.0);
            for_each_run(sH, sW, taps[j].dy, taps[j].dx, [&](std::ptrdiff_t oo, std::ptrdiff_t io, std::ptrdiff_t len) {
                std::copy_n(in + io, len, row + oo);
            });
        }
}

// Adjoint of im2col: dx[ci, p + shift_j] += dcols[ci * T + j, p]
void col2im_add(const Scalar* dcols, std::size_t Cin, std::size_t H, std::size_t W, const std::vector<Tap>& taps,
                Scalar* dx) {
    const std::size_t P = H * W;
    const auto sH = static_cast<std::ptrdiff_t>(H), sW = static_cast<std::ptrdiff_t>(W);
    for (std::size_t ci = 0; ci < Cin; ++ci)
        for (std::size_t j = 0; j < taps.size(); ++j) {
            const Scalar* row = dcols + (ci * taps.size() + j) * P;
            Scalar* d = dx + ci * P;
            for_each_run(sH, sW, taps[j].dy, taps[j].dx, [&](std::ptrdiff_t oo, std::ptrdiff_t io, std::ptrdiff_t len) {
                for (std::ptrdiff_t i = 0; i < len; ++i) d[io + i] += row[oo + i];
            });
        }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4)
        throw DimensionError("conv2d: expected x [B,Cin,H,W] and w [Cout,Cin,k,k], got " + shape_str(xs) + " and " +
                             shape_str(ws));
    if (xs[1] != ws[1])
        throw DimensionError("conv2d: input channels " + shape_str(xs) + " do not match kernel " + shape_str(ws));
    if (ws[2] != ws[3] || ws[2] % 2 == 0)
        throw DimensionError("conv2d: kernel must be square with odd size, got " + shape_str(ws));
    if (bias.shape() != Shape{ws[0]})
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match kernel " + shape_str(ws));

    const std::size_t B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const std::size_t Cout = ws[0], K = ws[2];
    const std::size_t P = H * W;
    const auto taps = live_taps(K, H, W);
    const std::size_t T = taps.size();
    const std::size_t R = Cin * T;

    // Kernel restricted to live taps, [Cout, Cin*T].
    RowMat wsel(Cout, R);
    {
        const auto wv = w.value().data();
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t ci = 0; ci < Cin; ++ci)
                for (std::size_t j = 0; j < T; ++j)
                    wsel(static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(ci * T + j)) =
                        wv[(co * Cin + ci) * K * K + taps[j].index];
    }

    Tensor out({B, Cout, H, W});
    {
        std::vector<Scalar> cols(R * P);
        const Scalar* xv = x.value().data().data();
        const auto bv = bias.value().data();
        Eigen::Map<const Eigen::VectorX<Scalar>> bvec(bv.data(), static_cast<Eigen::Index>(Cout));
        for (std::size_t n = 0; n < B; ++n) {
            im2col(xv + n * Cin * P, Cin, H, W, taps, cols.data());
            MapMat o(out.data().data() + n * Cout * P, static_cast<Eigen::Index>(Cout), static_cast<Eigen::Index>(P));
            ConstMapMat c(cols.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
            o.noalias() = wsel * c;
            o.colwise() += bvec;
        }
    }

    auto xn = x.node_ptr(), wn = w.node_ptr(), bn = bias.node_ptr();
    return x.graph().emit(std::move(out), {&x, &w, &bias},
                          [xn, wn, bn, B, Cin, Cout, H, W, K, P, R, T, taps, wsel = std::move(wsel)](detail::Node& o) {
        const Scalar* g = o.grad.data().data();
        if (bn->requires_grad) {
            auto db = bn->grad_buffer().data();
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t co = 0; co < Cout; ++co) {
                    const Scalar* gp = g + (n * Cout + co) * P;
                    Scalar s = 0.0;
                    for (std::size_t i = 0; i < P; ++i) s += gp[i];
                    db[co] += s;
                }
        }
        const bool need_w = wn->requires_grad, need_x = xn->requires_grad;
        if (!need_w && !need_x) return;
        std::vector<Scalar> cols(R * P);
        std::vector<Scalar> dcols(need_x ? R * P : 0);
        RowMat dwsel = RowMat::Zero(static_cast<Eigen::Index>(Cout), static_cast<Eigen::Index>(R));
        const Scalar* xv = xn->value.data().data();
        Scalar* dx = need_x ? xn->grad_buffer().data().data() : nullptr;
        for (std::size_t n = 0; n < B; ++n) {
            ConstMapMat gm(g + n * Cout * P, static_cast<Eigen::Index>(Cout), static_cast<Eigen::Index>(P));
            if (need_w) {
                im2col(xv + n * Cin * P, Cin, H, W, taps, cols.data());
                ConstMapMat c(cols.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
                dwsel.noalias() += gm * c.transpose();
            }
            if (need_x) {
                MapMat dc(dcols.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
                dc.noalias() = wsel.transpose() * gm;
                col2im_add(dcols.data(), Cin, H, W, taps, dx + n * Cin * P);
            }
        }
        if (need_w) {
            auto dw = wn->grad_buffer().data();
            for (std::size_t co = 0; co < Cout; ++co)
                for (std::size_t ci = 0; ci < Cin; ++ci)
                    for (std::size_t j = 0; j < T; ++j)
                        dw[(co * Cin + ci) * K * K + taps[j].index] +=
                            dwsel(static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(ci * T + j));
        }
    });
}

} // namespace diffrx::numcore
