#pragma once

// 2-D convolution and max pooling on NHWC tensors, stride 1 / stride 2.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "gpdnn/graph.hpp"
#include "gpdnn/ops.hpp"
#include "gpdnn/tensor.hpp"

namespace gpdnn {

enum class Padding { Same, Valid };

inline const char* to_string(Padding p) { return p == Padding::Same ? "SAME" : "VALID"; }

namespace detail {

struct ConvGeometry {
    std::size_t batch, height, width, in_ch;
    std::size_t kh, kw, out_ch;
    std::size_t out_h, out_w;
    std::size_t pad_top, pad_left;

    std::size_t patch() const { return kh * kw * in_ch; }
    std::size_t pixels() const { return out_h * out_w; }
};

// Stride-1 padding; SAME puts the odd extra pixel on the bottom/right.
inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, Padding padding) {
    if (x.size() != 4) throw ShapeError("conv2d: input must be [B,H,W,C], got " + shape_string(x));
    if (w.size() != 4) throw ShapeError("conv2d: kernel must be [kh,kw,Cin,Cout], got " + shape_string(w));
    if (x[3] != w[2]) {
        throw ShapeError("conv2d: input has " + std::to_string(x[3]) + " channels, kernel expects " +
                         std::to_string(w[2]));
    }
    ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[1], w[3], 0, 0, 0, 0};
    if (padding == Padding::Same) {
        g.out_h = g.height;
        g.out_w = g.width;
        g.pad_top = (g.kh - 1) / 2;
        g.pad_left = (g.kw - 1) / 2;
    } else {
        if (g.height < g.kh || g.width < g.kw) throw ShapeError("conv2d: VALID kernel larger than input");
        g.out_h = g.height - g.kh + 1;
        g.out_w = g.width - g.kw + 1;
    }
    return g;
}

// Patch matrix [out_h*out_w, kh*kw*Cin] of one image; column order matches
// the row-major flattening of the kernel's leading three axes.
inline void im2col(const ConvGeometry& g, const double* image, double* cols) {
    const std::size_t patch = g.patch();
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            double* row = cols + (oy * g.out_w + ox) * patch;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
                    double* dst = row + (ky * g.kw + kx) * g.in_ch;
                    if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.height) ||
                        ix >= static_cast<std::ptrdiff_t>(g.width)) {
                        std::fill(dst, dst + g.in_ch, 0.0);
                    } else {
                        const double* src = image + (static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)) * g.in_ch;
                        std::copy(src, src + g.in_ch, dst);
                    }
                }
            }
        }
}

inline void col2im_add(const ConvGeometry& g, const double* cols, double* image) {
    const std::size_t patch = g.patch();
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const double* row = cols + (oy * g.out_w + ox) * patch;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                for (std::size_t kx = 0; kx < g.kw; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                    const double* src = row + (ky * g.kw + kx) * g.in_ch;
                    double* dst = image + (static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)) * g.in_ch;
                    for (std::size_t c = 0; c < g.in_ch; ++c) dst[c] += src[c];
                }
            }
        }
}

}  // namespace detail

/// Stride-1 cross-correlation (no kernel flip) plus bias.
/// x: [B,H,W,Cin], w: [kh,kw,Cin,Cout], b: [Cout].
inline Var conv2d(Var x, Var w, Var b, Padding padding) {
    const Tensor xv = x.value();
    const Tensor wv = w.value();
    const Tensor& bv = b.value();
    const auto g = detail::conv_geometry(xv.shape(), wv.shape(), padding);
    if (bv.rank() != 1 || bv.size() != g.out_ch) throw ShapeError("conv2d: bias must be [Cout]");

    Tensor out(Shape{g.batch, g.out_h, g.out_w, g.out_ch});
    double* o = out.mutable_ptr();
    const auto kernel = ConstMatrixMap(wv.ptr(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.out_ch));
    const auto bias = Eigen::Map<const Eigen::RowVectorXd>(bv.ptr(), static_cast<Eigen::Index>(g.out_ch));
    RowMatrix cols(static_cast<Eigen::Index>(g.pixels()), static_cast<Eigen::Index>(g.patch()));
    const std::size_t in_stride = g.height * g.width * g.in_ch;
    const std::size_t out_stride = g.pixels() * g.out_ch;
    for (std::size_t n = 0; n < g.batch; ++n) {
        detail::im2col(g, xv.ptr() + n * in_stride, cols.data());
        MatrixMap dst(o + n * out_stride, static_cast<Eigen::Index>(g.pixels()), static_cast<Eigen::Index>(g.out_ch));
        dst.noalias() = cols * kernel;
        dst.rowwise() += bias;
    }

    return x.graph().record("conv2d", std::move(out), {x, w, b}, [xv, wv, g](const Tensor& grad, GradSink& s) {
        const auto kernel = ConstMatrixMap(wv.ptr(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.out_ch));
        const std::size_t in_stride = g.height * g.width * g.in_ch;
        const std::size_t out_stride = g.pixels() * g.out_ch;
        RowMatrix cols(static_cast<Eigen::Index>(g.pixels()), static_cast<Eigen::Index>(g.patch()));
        RowMatrix dcols(static_cast<Eigen::Index>(g.pixels()), static_cast<Eigen::Index>(g.patch()));
        RowMatrix dw = RowMatrix::Zero(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.out_ch));
        Eigen::RowVectorXd db = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(g.out_ch));
        Tensor dx(xv.shape());
        double* dxp = s.wants(0) ? dx.mutable_ptr() : nullptr;
        for (std::size_t n = 0; n < g.batch; ++n) {
            ConstMatrixMap go(grad.ptr() + n * out_stride, static_cast<Eigen::Index>(g.pixels()), static_cast<Eigen::Index>(g.out_ch));
            if (s.wants(1)) {
                detail::im2col(g, xv.ptr() + n * in_stride, cols.data());
                dw.noalias() += cols.transpose() * go;
            }
            if (s.wants(2)) db += go.colwise().sum();
            if (dxp) {
                dcols.noalias() = go * kernel.transpose();
                detail::col2im_add(g, dcols.data(), dxp + n * in_stride);
            }
        }
        if (dxp) s.add(0, std::move(dx));
        if (s.wants(1)) {
            Tensor t(wv.shape());
            MatrixMap(t.mutable_ptr(), dw.rows(), dw.cols()) = dw;
            s.add(1, std::move(t));
        }
        if (s.wants(2)) {
            Tensor t(Shape{g.out_ch});
            std::copy(db.data(), db.data() + db.size(), t.mutable_ptr());
            s.add(2, std::move(t));
        }
    });
}

/// Output extent of a window-2/stride-2 pool.
inline std::size_t pooled_extent(std::size_t extent, Padding padding) {
    if (padding == Padding::Same) return (extent + 1) / 2;
    if (extent < 2) throw ShapeError("maxpool2d: VALID window larger than input");
    return (extent - 2) / 2 + 1;
}

/// 2×2 max pooling with stride 2. Gradient goes to the first maximal element
/// of each window (row-major scan); padded cells never win.
inline Var maxpool2d(Var x, Padding padding) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw ShapeError("maxpool2d: input must be [B,H,W,C], got " + shape_string(xv.shape()));
    const std::size_t batch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), ch = xv.dim(3);
    const std::size_t oh = pooled_extent(h, padding), ow = pooled_extent(w, padding);
    // SAME: total padding max((out-1)*2+2-in, 0), top/left gets the floor half.
    const std::size_t pad_top = padding == Padding::Same ? ((oh - 1) * 2 + 2 > h ? ((oh - 1) * 2 + 2 - h) / 2 : 0) : 0;
    const std::size_t pad_left = padding == Padding::Same ? ((ow - 1) * 2 + 2 > w ? ((ow - 1) * 2 + 2 - w) / 2 : 0) : 0;

    Tensor out(Shape{batch, oh, ow, ch});
    double* o = out.mutable_ptr();
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const double* in = xv.ptr();
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t c = 0; c < ch; ++c) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    bool found = false;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * 2 + dy) - static_cast<std::ptrdiff_t>(pad_top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * 2 + dx) - static_cast<std::ptrdiff_t>(pad_left);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            const std::size_t idx = ((n * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * ch + c;
                            if (!found || in[idx] > best) {
                                best = in[idx];
                                best_idx = idx;
                                found = true;
                            }
                        }
                    }
                    const std::size_t oi = ((n * oh + oy) * ow + ox) * ch + c;
                    o[oi] = best;
                    (*argmax)[oi] = best_idx;
                }
    Shape sh = xv.shape();
    return x.graph().record("maxpool2d", std::move(out), {x}, [sh, argmax](const Tensor& g, GradSink& s) {
        Tensor d(sh);
        auto dp = d.mutable_data();
        for (std::size_t i = 0; i < argmax->size(); ++i) dp[(*argmax)[i]] += g[i];
        s.add(0, std::move(d));
    });
}

}  // namespace gpdnn
