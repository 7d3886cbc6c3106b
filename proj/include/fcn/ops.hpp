#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fcn/parallel.hpp"
#include "fcn/tape.hpp"
#include "fcn/tensor.hpp"

namespace fcn {

struct ConvSpec {
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int64_t kh = 1, kw = 1;
    int64_t sh = 1, sw = 1;
    int64_t ph = 0, pw = 0;
};

// Grouped upsampling: one 2f x 2f filter per channel, stride f, pad f/2, so
// the output is exactly f times the input size. No cross-channel mixing, no bias.
struct DeconvSpec {
    int64_t channels = 0;
    int64_t factor = 0;

    int64_t kernel() const { return 2 * factor; }
    int64_t pad() const { return factor / 2; }
};

namespace detail {

inline int64_t conv_out_dim(int64_t in, int64_t pad, int64_t k, int64_t stride, const char* axis) {
    const int64_t span = in + 2 * pad - k;
    if (span < 0 || span % stride != 0) {
        throw ShapeError(std::string("conv2d: geometry not exactly divisible on ") + axis);
    }
    return span / stride + 1;
}

inline int64_t ceil_div(int64_t a, int64_t b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation plus bias (no kernel flip).
// weight (out,in,kh,kw), bias (1,out,1,1).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                         const ConvSpec& spec) {
    if (x.shape.c != spec.in_channels) {
        throw ShapeError("conv2d: input has " + std::to_string(x.shape.c) +
                         " channels, spec expects " + std::to_string(spec.in_channels));
    }
    if (w.shape != Shape{spec.out_channels, spec.in_channels, spec.kh, spec.kw}) {
        throw ShapeError("conv2d: weight shape " + w.shape.str() + " does not match spec");
    }
    if (b != nullptr && b->shape != Shape{1, spec.out_channels, 1, 1}) {
        throw ShapeError("conv2d: bias shape " + b->shape.str() + " does not match spec");
    }
    const int64_t oh = detail::conv_out_dim(x.shape.h, spec.ph, spec.kh, spec.sh, "h");
    const int64_t ow = detail::conv_out_dim(x.shape.w, spec.pw, spec.kw, spec.sw, "w");

    Tensor<T> y(Shape{x.shape.n, spec.out_channels, oh, ow});
    const int64_t h = x.shape.h, wd = x.shape.w;
    parallel_for(x.shape.n * spec.out_channels, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / spec.out_channels;
            const int64_t oc = t % spec.out_channels;
            const T bias = b != nullptr ? b->data[static_cast<std::size_t>(oc)] : T{0};
            for (int64_t oy = 0; oy < oh; ++oy) {
                const int64_t iy0 = oy * spec.sh - spec.ph;
                const int64_t ky_lo = std::max<int64_t>(0, -iy0);
                const int64_t ky_hi = std::min(spec.kh, h - iy0);
                for (int64_t ox = 0; ox < ow; ++ox) {
                    const int64_t ix0 = ox * spec.sw - spec.pw;
                    const int64_t kx_lo = std::max<int64_t>(0, -ix0);
                    const int64_t kx_hi = std::min(spec.kw, wd - ix0);
                    T acc = bias;
                    for (int64_t ic = 0; ic < spec.in_channels; ++ic) {
                        for (int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                            const T* xrow =
                                &x.data[static_cast<std::size_t>(x.index(n, ic, iy0 + ky, ix0))];
                            const T* wrow =
                                &w.data[static_cast<std::size_t>(w.index(oc, ic, ky, 0))];
                            for (int64_t kx = kx_lo; kx < kx_hi; ++kx) {
                                acc += wrow[kx] * xrow[kx];
                            }
                        }
                    }
                    y.at(n, oc, oy, ox) = acc;
                }
            }
        }
    });
    check_finite(y, "conv2d");
    return y;
}

// Gather-form backward kernels: each worker owns a disjoint block of gradient
// targets and the per-target accumulation order is fixed.

template <typename T>
void conv2d_backward_input(Tensor<T>& gx, const Tensor<T>& gy, const Tensor<T>& w,
                           const ConvSpec& spec) {
    const int64_t oh = gy.shape.h, ow = gy.shape.w;
    parallel_for(gx.shape.n * gx.shape.c, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / gx.shape.c;
            const int64_t ic = t % gx.shape.c;
            for (int64_t iy = 0; iy < gx.shape.h; ++iy) {
                for (int64_t ix = 0; ix < gx.shape.w; ++ix) {
                    T acc{0};
                    for (int64_t oc = 0; oc < spec.out_channels; ++oc) {
                        for (int64_t ky = 0; ky < spec.kh; ++ky) {
                            const int64_t ny = iy + spec.ph - ky;
                            if (ny < 0 || ny % spec.sh != 0) continue;
                            const int64_t oy = ny / spec.sh;
                            if (oy >= oh) continue;
                            for (int64_t kx = 0; kx < spec.kw; ++kx) {
                                const int64_t nx = ix + spec.pw - kx;
                                if (nx < 0 || nx % spec.sw != 0) continue;
                                const int64_t ox = nx / spec.sw;
                                if (ox >= ow) continue;
                                acc += w.at(oc, ic, ky, kx) * gy.at(n, oc, oy, ox);
                            }
                        }
                    }
                    gx.at(n, ic, iy, ix) += acc;
                }
            }
        }
    });
}

template <typename T>
void conv2d_backward_weight(Tensor<T>& gw, const Tensor<T>& gy, const Tensor<T>& x,
                            const ConvSpec& spec) {
    const int64_t oh = gy.shape.h, ow = gy.shape.w;
    parallel_for(spec.out_channels * spec.in_channels, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t oc = t / spec.in_channels;
            const int64_t ic = t % spec.in_channels;
            for (int64_t ky = 0; ky < spec.kh; ++ky) {
                for (int64_t kx = 0; kx < spec.kw; ++kx) {
                    T acc{0};
                    for (int64_t n = 0; n < x.shape.n; ++n) {
                        for (int64_t oy = 0; oy < oh; ++oy) {
                            const int64_t iy = oy * spec.sh - spec.ph + ky;
                            if (iy < 0 || iy >= x.shape.h) continue;
                            for (int64_t ox = 0; ox < ow; ++ox) {
                                const int64_t ix = ox * spec.sw - spec.pw + kx;
                                if (ix < 0 || ix >= x.shape.w) continue;
                                acc += gy.at(n, oc, oy, ox) * x.at(n, ic, iy, ix);
                            }
                        }
                    }
                    gw.at(oc, ic, ky, kx) += acc;
                }
            }
        }
    });
}

template <typename T>
void conv2d_backward_bias(Tensor<T>& gb, const Tensor<T>& gy) {
    parallel_for(gy.shape.c, [&](int64_t lo, int64_t hi) {
        for (int64_t oc = lo; oc < hi; ++oc) {
            T acc{0};
            const int64_t plane = gy.shape.h * gy.shape.w;
            for (int64_t n = 0; n < gy.shape.n; ++n) {
                const T* p = &gy.data[static_cast<std::size_t>(gy.index(n, oc, 0, 0))];
                for (int64_t i = 0; i < plane; ++i) acc += p[i];
            }
            gb.data[static_cast<std::size_t>(oc)] += acc;
        }
    });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Parameter<T>& weight, Parameter<T>* bias,
           const ConvSpec& spec) {
    const Var wv = tape.use(weight);
    const Var bv = bias != nullptr ? tape.use(*bias) : Var{};
    Tensor<T> y = conv2d_forward(tape.value(x), weight.value,
                                 bias != nullptr ? &bias->value : nullptr, spec);
    return tape.record(std::move(y), [x, wv, bv, spec](Tape<T>& t, Var out) {
        const Tensor<T>& gy = t.grad(out);
        conv2d_backward_input(t.grad(x), gy, t.value(wv), spec);
        conv2d_backward_weight(t.grad(wv), gy, t.value(x), spec);
        if (bv.valid()) conv2d_backward_bias(t.grad(bv), gy);
    });
}

// ---------------------------------------------------------------------------
// maxpool2: 2x2 window, stride 2. The gradient flows only to each window's
// argmax; ties resolve to the first element in row-major window order.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<int64_t>* argmax) {
    if (x.shape.h % 2 != 0 || x.shape.w % 2 != 0) {
        throw ShapeError("maxpool2: h and w must be even, got " + x.shape.str());
    }
    Tensor<T> y(Shape{x.shape.n, x.shape.c, x.shape.h / 2, x.shape.w / 2});
    if (argmax != nullptr) argmax->assign(static_cast<std::size_t>(y.shape.elems()), 0);
    parallel_for(x.shape.n * x.shape.c, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / x.shape.c;
            const int64_t c = t % x.shape.c;
            for (int64_t oy = 0; oy < y.shape.h; ++oy) {
                for (int64_t ox = 0; ox < y.shape.w; ++ox) {
                    T best{};
                    int64_t best_idx = -1;
                    for (int64_t dy = 0; dy < 2; ++dy) {
                        for (int64_t dx = 0; dx < 2; ++dx) {
                            const int64_t idx = x.index(n, c, 2 * oy + dy, 2 * ox + dx);
                            const T v = x.data[static_cast<std::size_t>(idx)];
                            if (best_idx < 0 || v > best) {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    const int64_t oi = y.index(n, c, oy, ox);
                    y.data[static_cast<std::size_t>(oi)] = best;
                    if (argmax != nullptr) (*argmax)[static_cast<std::size_t>(oi)] = best_idx;
                }
            }
        }
    });
    check_finite(y, "maxpool2");
    return y;
}

template <typename T>
Var maxpool2(Tape<T>& tape, Var x) {
    auto argmax = std::make_shared<std::vector<int64_t>>();
    Tensor<T> y = maxpool2_forward(tape.value(x), tape.recording() ? argmax.get() : nullptr);
    return tape.record(std::move(y), [x, argmax](Tape<T>& t, Var out) {
        const Tensor<T>& gy = t.grad(out);
        Tensor<T>& gx = t.grad(x);
        // Windows are disjoint, so scatter targets never collide.
        parallel_for(gy.shape.elems(), [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                gx.data[static_cast<std::size_t>((*argmax)[static_cast<std::size_t>(i)])] +=
                    gy.data[static_cast<std::size_t>(i)];
            }
        });
    });
}

// ---------------------------------------------------------------------------
// relu: elementwise max(0,x); subgradient at exactly 0 is 0.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T{0} ? x.data[i] : T{0};
    return y;
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
    return tape.record(relu_forward(tape.value(x)), [x](Tape<T>& t, Var out) {
        const Tensor<T>& gy = t.grad(out);
        const Tensor<T>& xv = t.value(x);
        Tensor<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < gx.data.size(); ++i) {
            if (xv.data[i] > T{0}) gx.data[i] += gy.data[i];
        }
    });
}

// ---------------------------------------------------------------------------
// transposed_conv2d: per-channel scatter upsampling. Each input pixel adds
// x*K into a stride-f-spaced window of the padded output; pad f/2 is cropped
// per side, giving output size exactly f times the input.
// Implemented in gather form per output pixel. weight (c,1,2f,2f).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> transposed_conv2d_forward(const Tensor<T>& x, const Tensor<T>& w,
                                    const DeconvSpec& spec) {
    if (spec.factor < 2 || spec.factor % 2 != 0) {
        throw ParamError("transposed_conv2d: only even upsampling factors >= 2 are supported");
    }
    if (x.shape.c != spec.channels) {
        throw ShapeError("transposed_conv2d: input has " + std::to_string(x.shape.c) +
                         " channels, spec expects " + std::to_string(spec.channels));
    }
    const int64_t k = spec.kernel(), f = spec.factor, pad = spec.pad();
    if (w.shape != Shape{spec.channels, 1, k, k}) {
        throw ShapeError("transposed_conv2d: weight shape " + w.shape.str() +
                         " does not match spec (want (" + std::to_string(spec.channels) + ",1," +
                         std::to_string(k) + "," + std::to_string(k) + "))");
    }
    Tensor<T> y(Shape{x.shape.n, x.shape.c, x.shape.h * f, x.shape.w * f});
    parallel_for(x.shape.n * x.shape.c, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / x.shape.c;
            const int64_t c = t % x.shape.c;
            const T* kern = &w.data[static_cast<std::size_t>(w.index(c, 0, 0, 0))];
            for (int64_t oy = 0; oy < y.shape.h; ++oy) {
                // iy*f + ky == oy + pad with ky in [0,k)
                const int64_t iy_lo = std::max<int64_t>(0, detail::ceil_div(oy + pad - k + 1, f));
                const int64_t iy_hi = std::min(x.shape.h - 1, (oy + pad) / f);
                for (int64_t ox = 0; ox < y.shape.w; ++ox) {
                    const int64_t ix_lo =
                        std::max<int64_t>(0, detail::ceil_div(ox + pad - k + 1, f));
                    const int64_t ix_hi = std::min(x.shape.w - 1, (ox + pad) / f);
                    T acc{0};
                    for (int64_t iy = iy_lo; iy <= iy_hi; ++iy) {
                        const int64_t ky = oy + pad - iy * f;
                        for (int64_t ix = ix_lo; ix <= ix_hi; ++ix) {
                            const int64_t kx = ox + pad - ix * f;
                            acc += x.at(n, c, iy, ix) * kern[ky * k + kx];
                        }
                    }
                    y.at(n, c, oy, ox) = acc;
                }
            }
        }
    });
    check_finite(y, "transposed_conv2d");
    return y;
}

template <typename T>
void transposed_conv2d_backward_input(Tensor<T>& gx, const Tensor<T>& gy, const Tensor<T>& w,
                                      const DeconvSpec& spec) {
    const int64_t k = spec.kernel(), f = spec.factor, pad = spec.pad();
    parallel_for(gx.shape.n * gx.shape.c, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / gx.shape.c;
            const int64_t c = t % gx.shape.c;
            const T* kern = &w.data[static_cast<std::size_t>(w.index(c, 0, 0, 0))];
            for (int64_t iy = 0; iy < gx.shape.h; ++iy) {
                for (int64_t ix = 0; ix < gx.shape.w; ++ix) {
                    T acc{0};
                    for (int64_t ky = 0; ky < k; ++ky) {
                        const int64_t oy = iy * f + ky - pad;
                        if (oy < 0 || oy >= gy.shape.h) continue;
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const int64_t ox = ix * f + kx - pad;
                            if (ox < 0 || ox >= gy.shape.w) continue;
                            acc += kern[ky * k + kx] * gy.at(n, c, oy, ox);
                        }
                    }
                    gx.at(n, c, iy, ix) += acc;
                }
            }
        }
    });
}

template <typename T>
void transposed_conv2d_backward_weight(Tensor<T>& gw, const Tensor<T>& gy, const Tensor<T>& x,
                                       const DeconvSpec& spec) {
    const int64_t k = spec.kernel(), f = spec.factor, pad = spec.pad();
    parallel_for(spec.channels, [&](int64_t lo, int64_t hi) {
        for (int64_t c = lo; c < hi; ++c) {
            for (int64_t ky = 0; ky < k; ++ky) {
                for (int64_t kx = 0; kx < k; ++kx) {
                    T acc{0};
                    for (int64_t n = 0; n < x.shape.n; ++n) {
                        for (int64_t iy = 0; iy < x.shape.h; ++iy) {
                            const int64_t oy = iy * f + ky - pad;
                            if (oy < 0 || oy >= gy.shape.h) continue;
                            for (int64_t ix = 0; ix < x.shape.w; ++ix) {
                                const int64_t ox = ix * f + kx - pad;
                                if (ox < 0 || ox >= gy.shape.w) continue;
                                acc += x.at(n, c, iy, ix) * gy.at(n, c, oy, ox);
                            }
                        }
                    }
                    gw.at(c, 0, ky, kx) += acc;
                }
            }
        }
    });
}

template <typename T>
Var transposed_conv2d(Tape<T>& tape, Var x, Parameter<T>& weight, const DeconvSpec& spec) {
    const Var wv = tape.use(weight);
    Tensor<T> y = transposed_conv2d_forward(tape.value(x), weight.value, spec);
    return tape.record(std::move(y), [x, wv, spec](Tape<T>& t, Var out) {
        const Tensor<T>& gy = t.grad(out);
        transposed_conv2d_backward_input(t.grad(x), gy, t.value(wv), spec);
        transposed_conv2d_backward_weight(t.grad(wv), gy, t.value(x), spec);
    });
}

// ---------------------------------------------------------------------------
// bilinear_kernel: K[i,j] = k[i]*k[j] with k[i] = 1 - |i + 0.5 - f| / f.
// Test fixture / optional deconv initializer; shape (1,1,2f,2f).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bilinear_kernel(int64_t f) {
    if (f < 2 || f % 2 != 0) throw ParamError("bilinear_kernel: f must be even and >= 2");
    const int64_t k = 2 * f;
    std::vector<T> taps(static_cast<std::size_t>(k));
    for (int64_t i = 0; i < k; ++i) {
        taps[static_cast<std::size_t>(i)] =
            static_cast<T>(1.0 - std::abs(static_cast<double>(i) + 0.5 - static_cast<double>(f)) /
                                     static_cast<double>(f));
    }
    Tensor<T> out(Shape{1, 1, k, k});
    for (int64_t i = 0; i < k; ++i) {
        for (int64_t j = 0; j < k; ++j) {
            out.at(0, 0, i, j) = taps[static_cast<std::size_t>(i)] * taps[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat_channels: stacks inputs along the channel axis; block i is a
// verbatim copy of input i. Backward slices the gradient back per block.
// ---------------------------------------------------------------------------

template <typename T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& inputs) {
    if (inputs.empty()) throw ParamError("concat_channels: empty input list");
    const Shape first = tape.value(inputs[0]).shape;
    int64_t total_c = 0;
    for (const Var v : inputs) {
        const Shape s = tape.value(v).shape;
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw ShapeError("concat_channels: mismatched batch/spatial dims " + s.str() +
                             " vs " + first.str());
        }
        total_c += s.c;
    }
    Tensor<T> y(Shape{first.n, total_c, first.h, first.w});
    const int64_t plane = first.h * first.w;
    int64_t c_off = 0;
    for (const Var v : inputs) {
        const Tensor<T>& xi = tape.value(v);
        for (int64_t n = 0; n < first.n; ++n) {
            std::copy(xi.data.begin() + n * xi.shape.c * plane,
                      xi.data.begin() + (n + 1) * xi.shape.c * plane,
                      y.data.begin() + (n * total_c + c_off) * plane);
        }
        c_off += xi.shape.c;
    }
    auto ins = std::make_shared<std::vector<Var>>(inputs);
    return tape.record(std::move(y), [ins, first, plane, total_c](Tape<T>& t, Var out) {
        const Tensor<T>& gy = t.grad(out);
        int64_t off = 0;
        for (const Var v : *ins) {
            Tensor<T>& gx = t.grad(v);
            const int64_t ci = gx.shape.c;
            for (int64_t n = 0; n < first.n; ++n) {
                const T* src = &gy.data[static_cast<std::size_t>((n * total_c + off) * plane)];
                T* dst = &gx.data[static_cast<std::size_t>(n * ci * plane)];
                for (int64_t i = 0; i < ci * plane; ++i) dst[i] += src[i];
            }
            off += ci;
        }
    });
}

// ---------------------------------------------------------------------------
// softmax_cross_entropy: per-pixel 2-way softmax (max-subtracted) and mean
// negative log-likelihood over all n*h*w pixels.
// ---------------------------------------------------------------------------

template <typename T>
struct SoftmaxLoss {
    Var loss;           // scalar
    Tensor<T> probs;    // (n,2,h,w)
};

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(Tape<T>& tape, Var logits, const Mask& labels) {
    const Tensor<T>& z = tape.value(logits);
    if (z.shape.c != 2) {
        throw ShapeError("softmax_cross_entropy: logits must have 2 channels, got " +
                         z.shape.str());
    }
    if (labels.n != z.shape.n || labels.h != z.shape.h || labels.w != z.shape.w) {
        throw ShapeError("softmax_cross_entropy: label grid dims do not match logits");
    }
    for (const auto l : labels.v) {
        if (l > 1) throw DataError("softmax_cross_entropy: label outside {0,1}");
    }
    const int64_t pixels = z.shape.n * z.shape.h * z.shape.w;
    auto probs = std::make_shared<Tensor<T>>(z.shape);
    const int64_t plane = z.shape.h * z.shape.w;
    double loss_sum = 0.0;
    for (int64_t n = 0; n < z.shape.n; ++n) {
        const T* l0 = &z.data[static_cast<std::size_t>(z.index(n, 0, 0, 0))];
        const T* l1 = &z.data[static_cast<std::size_t>(z.index(n, 1, 0, 0))];
        T* p0 = &probs->data[static_cast<std::size_t>(z.index(n, 0, 0, 0))];
        T* p1 = &probs->data[static_cast<std::size_t>(z.index(n, 1, 0, 0))];
        const std::uint8_t* lab = &labels.v[static_cast<std::size_t>(n * plane)];
        for (int64_t i = 0; i < plane; ++i) {
            const T m = std::max(l0[i], l1[i]);
            const T e0 = std::exp(l0[i] - m);
            const T e1 = std::exp(l1[i] - m);
            const T zsum = e0 + e1;
            p0[i] = e0 / zsum;
            p1[i] = e1 / zsum;
            const T zl = lab[i] == 0 ? l0[i] : l1[i];
            loss_sum += static_cast<double>(-(zl - m) + std::log(zsum));
        }
    }
    Tensor<T> loss(Shape{1, 1, 1, 1});
    loss.data[0] = static_cast<T>(loss_sum / static_cast<double>(pixels));
    check_finite(loss, "softmax_cross_entropy");
    auto labels_copy = std::make_shared<Mask>(labels);
    Var lv = tape.record(std::move(loss), [logits, probs, labels_copy, pixels, plane](
                                              Tape<T>& t, Var out) {
        const T g0 = t.grad(out).data[0];
        const Tensor<T>& p = *probs;
        Tensor<T>& gz = t.grad(logits);
        const T scale = g0 / static_cast<T>(pixels);
        for (int64_t n = 0; n < p.shape.n; ++n) {
            const std::uint8_t* lab = &labels_copy->v[static_cast<std::size_t>(n * plane)];
            T* gz0 = &gz.data[static_cast<std::size_t>(gz.index(n, 0, 0, 0))];
            T* gz1 = &gz.data[static_cast<std::size_t>(gz.index(n, 1, 0, 0))];
            const T* p0 = &p.data[static_cast<std::size_t>(p.index(n, 0, 0, 0))];
            const T* p1 = &p.data[static_cast<std::size_t>(p.index(n, 1, 0, 0))];
            for (int64_t i = 0; i < plane; ++i) {
                const T y0 = lab[i] == 0 ? T{1} : T{0};
                gz0[i] += scale * (p0[i] - y0);
                gz1[i] += scale * (p1[i] - (T{1} - y0));
            }
        }
    });
    return SoftmaxLoss<T>{lv, *probs};
}

// ---------------------------------------------------------------------------
// Elementwise add and a fixed-coefficient reduction, used by the loss-side
// plumbing and the gradient-check harness.
// ---------------------------------------------------------------------------

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>& av = tape.value(a);
    const Tensor<T>& bv = tape.value(b);
    if (av.shape != bv.shape) {
        throw ShapeError("add: shape mismatch " + av.shape.str() + " vs " + bv.shape.str());
    }
    Tensor<T> y(av.shape);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] + bv.data[i];
    check_finite(y, "add");
    return tape.record(std::move(y), [a, b](Tape<T>& t, Var out) {
        const Tensor<T>& gy = t.grad(out);
        Tensor<T>& ga = t.grad(a);
        Tensor<T>& gb = t.grad(b);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
            ga.data[i] += gy.data[i];
            gb.data[i] += gy.data[i];
        }
    });
}

// Scalar sum of coeffs (.) x; gradient wrt x is coeffs scaled by the
// incoming scalar gradient.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& coeffs) {
    const Tensor<T>& xv = tape.value(x);
    if (xv.shape != coeffs.shape) {
        throw ShapeError("weighted_sum: shape mismatch " + xv.shape.str() + " vs " +
                         coeffs.shape.str());
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.data.size(); ++i) {
        acc += static_cast<double>(xv.data[i]) * static_cast<double>(coeffs.data[i]);
    }
    Tensor<T> y(Shape{1, 1, 1, 1});
    y.data[0] = static_cast<T>(acc);
    check_finite(y, "weighted_sum");
    auto cs = std::make_shared<Tensor<T>>(coeffs);
    return tape.record(std::move(y), [x, cs](Tape<T>& t, Var out) {
        const T g0 = t.grad(out).data[0];
        Tensor<T>& gx = t.grad(x);
        for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g0 * cs->data[i];
    });
}

}  // namespace fcn
