#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "textseg/tensor.hpp"

namespace textseg {

namespace detail {

template <typename S>
inline void require_4d(const TensorT<S>& t, const char* what) {
    if (t.dims.size() != 4)
        throw ShapeError(std::string(what) + " must be NCHW, got " + shape_str(t.dims));
}

}  // namespace detail

// 2-D convolution, NCHW, same-zero padding (odd kernels only). Output spatial
// size equals ceil over the strided grid; at stride 1 it matches the input.
template <typename S>
VarT<S> conv2d(const VarT<S>& x, const VarT<S>& kernel, const VarT<S>& bias, int stride = 1) {
    detail::require_4d(x->value, "conv2d input");
    detail::require_4d(kernel->value, "conv2d kernel");
    const TensorT<S>& xv = x->value;
    const TensorT<S>& kv = kernel->value;

    const int n = xv.n(), cin = xv.c(), h = xv.h(), w = xv.w();
    const int cout = kv.dims[0], kcin = kv.dims[1], kh = kv.dims[2], kw = kv.dims[3];
    if (cin != kcin)
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(cin) +
                         ", kernel expects " + std::to_string(kcin));
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ShapeError("same-zero padding requires odd kernel extents, got " +
                         std::to_string(kh) + "x" + std::to_string(kw));
    if (bias->value.size() != cout)
        throw ShapeError("conv2d bias length " + std::to_string(bias->value.size()) +
                         " != out channels " + std::to_string(cout));
    if (stride < 1) throw ValueError("conv2d stride must be >= 1");
    if (!xv.all_finite()) throw NumericError("conv2d input contains non-finite values");

    const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const int ho = (h + 2 * ph - kh) / stride + 1;
    const int wo = (w + 2 * pw - kw) / stride + 1;

    TensorT<S> out(Shape{n, cout, ho, wo});
    const S* xd = xv.data.data();
    const S* kd = kv.data.data();
    const S* bd = bias->value.data.data();
    S* od = out.data.data();

    for (int in = 0; in < n; ++in)
        for (int oc = 0; oc < cout; ++oc) {
            S* oplane = od + (static_cast<std::int64_t>(in) * cout + oc) * ho * wo;
            std::fill(oplane, oplane + static_cast<std::int64_t>(ho) * wo, bd[oc]);
            for (int ic = 0; ic < cin; ++ic) {
                const S* xplane = xd + (static_cast<std::int64_t>(in) * cin + ic) * h * w;
                const S* kplane = kd + ((static_cast<std::int64_t>(oc) * cin + ic) * kh) * kw;
                for (int dy = 0; dy < kh; ++dy)
                    for (int dx = 0; dx < kw; ++dx) {
                        const S kval = kplane[dy * kw + dx];
                        if (kval == S(0)) continue;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride - ph + dy;
                            if (iy < 0 || iy >= h) continue;
                            const S* xrow = xplane + static_cast<std::int64_t>(iy) * w;
                            S* orow = oplane + static_cast<std::int64_t>(oy) * wo;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride - pw + dx;
                                if (ix < 0 || ix >= w) continue;
                                orow[ox] += kval * xrow[ix];
                            }
                        }
                    }
            }
        }

    auto bp = [n, cin, h, w, cout, kh, kw, ph, pw, ho, wo, stride](NodeT<S>& self) {
        const auto& xn = self.parents[0];
        const auto& kn = self.parents[1];
        const auto& bn = self.parents[2];
        const S* g = self.grad.data();
        const bool want_x = xn->requires_grad;
        const bool want_k = kn->requires_grad;
        const bool want_b = bn->requires_grad;
        if (want_x) xn->ensure_grad();
        if (want_k) kn->ensure_grad();
        if (want_b) bn->ensure_grad();

        if (want_b) {
            S* bg = bn->grad.data();
            for (int in = 0; in < n; ++in)
                for (int oc = 0; oc < cout; ++oc) {
                    const S* gplane = g + (static_cast<std::int64_t>(in) * cout + oc) * ho * wo;
                    S acc(0);
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(ho) * wo; ++i) acc += gplane[i];
                    bg[oc] += acc;
                }
        }
        if (!want_x && !want_k) return;

        const S* xd = xn->value.data.data();
        const S* kd = kn->value.data.data();
        S* xg = want_x ? xn->grad.data() : nullptr;
        S* kg = want_k ? kn->grad.data() : nullptr;
        for (int in = 0; in < n; ++in)
            for (int oc = 0; oc < cout; ++oc) {
                const S* gplane = g + (static_cast<std::int64_t>(in) * cout + oc) * ho * wo;
                for (int ic = 0; ic < cin; ++ic) {
                    const S* xplane = xd + (static_cast<std::int64_t>(in) * cin + ic) * h * w;
                    S* xgplane = want_x ? xg + (static_cast<std::int64_t>(in) * cin + ic) * h * w : nullptr;
                    const std::int64_t kbase = (static_cast<std::int64_t>(oc) * cin + ic) * kh * kw;
                    for (int dy = 0; dy < kh; ++dy)
                        for (int dx = 0; dx < kw; ++dx) {
                            const S kval = kd[kbase + dy * kw + dx];
                            S kacc(0);
                            for (int oy = 0; oy < ho; ++oy) {
                                const int iy = oy * stride - ph + dy;
                                if (iy < 0 || iy >= h) continue;
                                const S* grow = gplane + static_cast<std::int64_t>(oy) * wo;
                                const S* xrow = xplane + static_cast<std::int64_t>(iy) * w;
                                S* xgrow = want_x ? xgplane + static_cast<std::int64_t>(iy) * w : nullptr;
                                for (int ox = 0; ox < wo; ++ox) {
                                    const int ix = ox * stride - pw + dx;
                                    if (ix < 0 || ix >= w) continue;
                                    const S gv = grow[ox];
                                    if (want_k) kacc += gv * xrow[ix];
                                    if (want_x) xgrow[ix] += gv * kval;
                                }
                            }
                            if (want_k) kg[kbase + dy * kw + dx] += kacc;
                        }
                }
            }
    };
    return make_node<S>(std::move(out), {x, kernel, bias}, std::move(bp));
}

enum class BnMode { Training, Inference };

// Running statistics and hyperparameters of one BatchNorm layer. gamma/beta
// live as graph leaves beside this.
template <typename S>
struct BatchNormStateT {
    std::vector<S> running_mean;
    std::vector<S> running_var;
    S epsilon = S(1e-5);
    S momentum = S(0.9);  // running = momentum * running + (1 - momentum) * batch

    explicit BatchNormStateT(int channels = 0)
        : running_mean(channels, S(0)), running_var(channels, S(1)) {}
};

// Channel-wise batch normalization. Training mode normalizes with batch
// statistics over N,H,W (biased variance) and updates the running stats;
// inference mode normalizes with the stored running stats.
template <typename S>
VarT<S> batchnorm(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta,
                  BatchNormStateT<S>& state, BnMode mode) {
    detail::require_4d(x->value, "batchnorm input");
    const TensorT<S>& xv = x->value;
    const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
    if (gamma->value.size() != c || beta->value.size() != c ||
        static_cast<int>(state.running_mean.size()) != c)
        throw ShapeError("batchnorm parameter length != channel count " + std::to_string(c));
    if (state.epsilon <= S(0)) throw ValueError("batchnorm epsilon must be > 0");

    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t m = static_cast<std::int64_t>(n) * plane;

    std::vector<S> mean(c), inv_std(c);
    if (mode == BnMode::Training) {
        for (int ic = 0; ic < c; ++ic) {
            S mu(0);
            for (int in = 0; in < n; ++in) {
                const S* p = xv.data.data() + (static_cast<std::int64_t>(in) * c + ic) * plane;
                for (std::int64_t i = 0; i < plane; ++i) mu += p[i];
            }
            mu /= static_cast<S>(m);
            S var(0);
            for (int in = 0; in < n; ++in) {
                const S* p = xv.data.data() + (static_cast<std::int64_t>(in) * c + ic) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const S d = p[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<S>(m);
            mean[ic] = mu;
            inv_std[ic] = S(1) / std::sqrt(var + state.epsilon);
            state.running_mean[ic] = state.momentum * state.running_mean[ic] + (S(1) - state.momentum) * mu;
            state.running_var[ic] = state.momentum * state.running_var[ic] + (S(1) - state.momentum) * var;
        }
    } else {
        for (int ic = 0; ic < c; ++ic) {
            mean[ic] = state.running_mean[ic];
            inv_std[ic] = S(1) / std::sqrt(state.running_var[ic] + state.epsilon);
        }
    }

    TensorT<S> out(xv.dims);
    std::vector<S> xhat(xv.data.size());
    const S* gm = gamma->value.data.data();
    const S* bt = beta->value.data.data();
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * plane;
            const S mu = mean[ic], is = inv_std[ic], gv = gm[ic], bv = bt[ic];
            for (std::int64_t i = 0; i < plane; ++i) {
                const S xh = (xv.data[base + i] - mu) * is;
                xhat[base + i] = xh;
                out.data[base + i] = gv * xh + bv;
            }
        }

    const bool batch_stats = (mode == BnMode::Training);
    auto bp = [n, c, plane, m, xhat = std::move(xhat), inv_std = std::move(inv_std),
               batch_stats](NodeT<S>& self) {
        const auto& xn = self.parents[0];
        const auto& gn = self.parents[1];
        const auto& bn = self.parents[2];
        const S* g = self.grad.data();
        const bool want_x = xn->requires_grad;
        if (want_x) xn->ensure_grad();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        const S* gamma_v = gn->value.data.data();

        for (int ic = 0; ic < c; ++ic) {
            S sum_g(0), sum_gx(0);
            for (int in = 0; in < n; ++in) {
                const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    sum_g += g[base + i];
                    sum_gx += g[base + i] * xhat[base + i];
                }
            }
            if (bn->requires_grad) bn->grad[ic] += sum_g;
            if (gn->requires_grad) gn->grad[ic] += sum_gx;
            if (!want_x) continue;

            const S scale = gamma_v[ic] * inv_std[ic];
            if (batch_stats) {
                const S mg = sum_g / static_cast<S>(m);
                const S mgx = sum_gx / static_cast<S>(m);
                for (int in = 0; in < n; ++in) {
                    const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * plane;
                    for (std::int64_t i = 0; i < plane; ++i)
                        xn->grad[base + i] += scale * (g[base + i] - mg - xhat[base + i] * mgx);
                }
            } else {
                for (int in = 0; in < n; ++in) {
                    const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * plane;
                    for (std::int64_t i = 0; i < plane; ++i)
                        xn->grad[base + i] += scale * g[base + i];
                }
            }
        }
    };
    return make_node<S>(std::move(out), {x, gamma, beta}, std::move(bp));
}

// Elementwise max(0, x). Subgradient at exactly 0 is 0.
template <typename S>
VarT<S> relu(const VarT<S>& x) {
    TensorT<S> out(x->value.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = x->value.data[i] > S(0) ? x->value.data[i] : S(0);
    auto bp = [](NodeT<S>& self) {
        const auto& xn = self.parents[0];
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (xn->value.data[i] > S(0)) xn->grad[i] += self.grad[i];
    };
    auto node = make_node<S>(std::move(out), {x}, std::move(bp));
    node->op = "relu";
    return node;
}

// 2x2 max pooling, stride 2. Requires even H and W. The gradient routes to
// the first (row-major) occurrence of the window maximum.
template <typename S>
VarT<S> maxpool2(const VarT<S>& x) {
    detail::require_4d(x->value, "maxpool2 input");
    const TensorT<S>& xv = x->value;
    const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("maxpool2 requires even spatial extents, got " + shape_str(xv.dims));

    const int ho = h / 2, wo = w / 2;
    TensorT<S> out(Shape{n, c, ho, wo});
    std::vector<std::int64_t> argmax(out.data.size());
    std::int64_t oi = 0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * h * w;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox, ++oi) {
                    S best{};
                    std::int64_t best_i = -1;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::int64_t xi = base + static_cast<std::int64_t>(oy * 2 + dy) * w + (ox * 2 + dx);
                            if (best_i < 0 || xv.data[xi] > best) {
                                best = xv.data[xi];
                                best_i = xi;
                            }
                        }
                    out.data[oi] = best;
                    argmax[oi] = best_i;
                }
        }

    auto bp = [argmax = std::move(argmax)](NodeT<S>& self) {
        const auto& xn = self.parents[0];
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            xn->grad[static_cast<std::size_t>(argmax[i])] += self.grad[i];
    };
    auto node = make_node<S>(std::move(out), {x}, std::move(bp));
    node->op = "maxpool2";
    return node;
}

// Nearest-neighbor x2 upsampling. Backward sums each 2x2 output block.
template <typename S>
VarT<S> upsample2(const VarT<S>& x) {
    detail::require_4d(x->value, "upsample2 input");
    const TensorT<S>& xv = x->value;
    const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
    const int ho = h * 2, wo = w * 2;
    TensorT<S> out(Shape{n, c, ho, wo});
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const std::int64_t ibase = (static_cast<std::int64_t>(in) * c + ic) * h * w;
            const std::int64_t obase = (static_cast<std::int64_t>(in) * c + ic) * ho * wo;
            for (int oy = 0; oy < ho; ++oy) {
                const S* xrow = xv.data.data() + ibase + static_cast<std::int64_t>(oy / 2) * w;
                S* orow = out.data.data() + obase + static_cast<std::int64_t>(oy) * wo;
                for (int ox = 0; ox < wo; ++ox) orow[ox] = xrow[ox / 2];
            }
        }
    auto bp = [n, c, h, w, ho, wo](NodeT<S>& self) {
        const auto& xn = self.parents[0];
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const std::int64_t ibase = (static_cast<std::int64_t>(in) * c + ic) * h * w;
                const std::int64_t obase = (static_cast<std::int64_t>(in) * c + ic) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const S* grow = self.grad.data() + obase + static_cast<std::int64_t>(oy) * wo;
                    S* xgrow = xn->grad.data() + ibase + static_cast<std::int64_t>(oy / 2) * w;
                    for (int ox = 0; ox < wo; ++ox) xgrow[ox / 2] += grow[ox];
                }
            }
    };
    return make_node<S>(std::move(out), {x}, std::move(bp));
}

// Channel concatenation, a's channels first.
template <typename S>
VarT<S> concat_channels(const VarT<S>& a, const VarT<S>& b) {
    detail::require_4d(a->value, "concat input");
    detail::require_4d(b->value, "concat input");
    const TensorT<S>& av = a->value;
    const TensorT<S>& bv = b->value;
    if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w())
        throw ShapeError("concat_channels spatial/batch mismatch: " + shape_str(av.dims) +
                         " vs " + shape_str(bv.dims));
    const int n = av.n(), ca = av.c(), cb = bv.c(), h = av.h(), w = av.w();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    TensorT<S> out(Shape{n, ca + cb, h, w});
    for (int in = 0; in < n; ++in) {
        std::copy_n(av.data.data() + static_cast<std::int64_t>(in) * ca * plane, ca * plane,
                    out.data.data() + static_cast<std::int64_t>(in) * (ca + cb) * plane);
        std::copy_n(bv.data.data() + static_cast<std::int64_t>(in) * cb * plane, cb * plane,
                    out.data.data() + (static_cast<std::int64_t>(in) * (ca + cb) + ca) * plane);
    }
    auto bp = [n, ca, cb, plane](NodeT<S>& self) {
        const auto& an = self.parents[0];
        const auto& bn = self.parents[1];
        if (an->requires_grad) {
            an->ensure_grad();
            for (int in = 0; in < n; ++in) {
                const S* g = self.grad.data() + static_cast<std::int64_t>(in) * (ca + cb) * plane;
                S* ag = an->grad.data() + static_cast<std::int64_t>(in) * ca * plane;
                for (std::int64_t i = 0; i < ca * plane; ++i) ag[i] += g[i];
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int in = 0; in < n; ++in) {
                const S* g = self.grad.data() + (static_cast<std::int64_t>(in) * (ca + cb) + ca) * plane;
                S* bg = bn->grad.data() + static_cast<std::int64_t>(in) * cb * plane;
                for (std::int64_t i = 0; i < cb * plane; ++i) bg[i] += g[i];
            }
        }
    };
    return make_node<S>(std::move(out), {a, b}, std::move(bp));
}

// Per-pixel softmax over the channel dimension, stabilized by max
// subtraction.
template <typename S>
VarT<S> softmax_channels(const VarT<S>& x) {
    detail::require_4d(x->value, "softmax input");
    const TensorT<S>& xv = x->value;
    const int n = xv.n(), c = xv.c(), h = xv.h(), w = xv.w();
    if (c < 2) throw ShapeError("softmax_channels requires >= 2 channels, got " + std::to_string(c));
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;

    TensorT<S> out(xv.dims);
    for (int in = 0; in < n; ++in) {
        const std::int64_t nbase = static_cast<std::int64_t>(in) * c * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            S mx = xv.data[nbase + i];
            for (int ic = 1; ic < c; ++ic) mx = std::max(mx, xv.data[nbase + ic * plane + i]);
            S denom(0);
            for (int ic = 0; ic < c; ++ic) {
                const S e = std::exp(xv.data[nbase + ic * plane + i] - mx);
                out.data[nbase + ic * plane + i] = e;
                denom += e;
            }
            for (int ic = 0; ic < c; ++ic) out.data[nbase + ic * plane + i] /= denom;
        }
    }

    auto bp = [n, c, plane](NodeT<S>& self) {
        const auto& xn = self.parents[0];
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const S* y = self.value.data.data();
        for (int in = 0; in < n; ++in) {
            const std::int64_t nbase = static_cast<std::int64_t>(in) * c * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                S dot(0);
                for (int ic = 0; ic < c; ++ic)
                    dot += self.grad[nbase + ic * plane + i] * y[nbase + ic * plane + i];
                for (int ic = 0; ic < c; ++ic) {
                    const std::int64_t k = nbase + ic * plane + i;
                    xn->grad[k] += y[k] * (self.grad[k] - dot);
                }
            }
        }
    };
    return make_node<S>(std::move(out), {x}, std::move(bp));
}

// Elementwise sum of two same-shape tensors.
template <typename S>
VarT<S> add(const VarT<S>& a, const VarT<S>& b) {
    if (!same_shape(a->value.dims, b->value.dims))
        throw ShapeError("add shape mismatch: " + shape_str(a->value.dims) + " vs " +
                         shape_str(b->value.dims));
    TensorT<S> out(a->value.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a->value.data[i] + b->value.data[i];
    auto bp = [](NodeT<S>& self) {
        for (int p = 0; p < 2; ++p) {
            const auto& pn = self.parents[p];
            if (!pn->requires_grad) continue;
            pn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pn->grad[i] += self.grad[i];
        }
    };
    return make_node<S>(std::move(out), {a, b}, std::move(bp));
}

// Reduces a tensor to its scalar sum.
template <typename S>
VarT<S> sum_all(const VarT<S>& x) {
    S acc(0);
    for (S v : x->value.data) acc += v;
    TensorT<S> out(Shape{1}, {acc});
    auto bp = [](NodeT<S>& self) {
        const auto& xn = self.parents[0];
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const S g = self.grad[0];
        for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    };
    return make_node<S>(std::move(out), {x}, std::move(bp));
}

}  // namespace textseg
