#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <memory>
#include <functional>
#include <numeric>
#include <vector>

#include "corrhal/common.hpp"
#include "corrhal/geometry.hpp"

namespace corrhal::ad {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

/// Dense row-major tensor. Grids use shape {h, w, c} with channel-last
/// layout, matrices {rows, cols}; both share the same flat ordering so
/// reshape between them is a relabeling.
template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> v;

    TensorData() = default;
    explicit TensorData(Shape s) : shape(std::move(s)), v(shape_numel(shape), T(0)) {}
    TensorData(Shape s, std::vector<T> values) : shape(std::move(s)), v(std::move(values)) {}

    size_t numel() const { return v.size(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    template <typename U>
    TensorData<U> cast() const {
        TensorData<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using Var = int;

/// Reverse-mode tape over dense tensors. Ops append nodes in topological
/// order; backward() replays them once in reverse. Single writer during
/// forward/backward; distinct tapes are independent.
template <typename T>
class Tape {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatMap = Eigen::Map<Mat>;
    using ConstMatMap = Eigen::Map<const Mat>;

    explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}

    Var input(TensorData<T> value) {
        return push(std::move(value), nullptr);
    }

    const TensorData<T>& value(Var id) const { return nodes_[static_cast<size_t>(id)].value; }
    const TensorData<T>& grad(Var id) const { return nodes_[static_cast<size_t>(id)].grad; }
    size_t node_count() const { return nodes_.size(); }

    // ---- elementwise ----

    Var relu(Var x) {
        const auto& xv = val(x);
        TensorData<T> out(xv.shape);
        for (size_t i = 0; i < xv.numel(); ++i) out.v[i] = xv.v[i] > T(0) ? xv.v[i] : T(0);
        return push(std::move(out), [x](Tape& t, size_t self) {
            const auto& xv = t.val(x);
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (size_t i = 0; i < xv.numel(); ++i)
                if (xv.v[i] > T(0)) gx.v[i] += g.v[i];
        });
    }

    Var sigmoid(Var x) {
        const auto& xv = val(x);
        TensorData<T> out(xv.shape);
        for (size_t i = 0; i < xv.numel(); ++i) out.v[i] = T(1) / (T(1) + std::exp(-xv.v[i]));
        return push(std::move(out), [x](Tape& t, size_t self) {
            const auto& y = t.nodes_[self].value;
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (size_t i = 0; i < y.numel(); ++i) gx.v[i] += g.v[i] * y.v[i] * (T(1) - y.v[i]);
        });
    }

    /// log(max(x, clamp)); gradient is zero in the clamped region.
    Var clamp_log(Var x, T clamp) {
        const auto& xv = val(x);
        TensorData<T> out(xv.shape);
        for (size_t i = 0; i < xv.numel(); ++i) out.v[i] = std::log(std::max(xv.v[i], clamp));
        return push(std::move(out), [x, clamp](Tape& t, size_t self) {
            const auto& xv = t.val(x);
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (size_t i = 0; i < xv.numel(); ++i)
                if (xv.v[i] > clamp) gx.v[i] += g.v[i] / xv.v[i];
        });
    }

    Var add(Var a, Var b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        require(av.shape == bv.shape, "add: shape mismatch");
        TensorData<T> out(av.shape);
        for (size_t i = 0; i < av.numel(); ++i) out.v[i] = av.v[i] + bv.v[i];
        return push(std::move(out), [a, b](Tape& t, size_t self) {
            const auto& g = t.nodes_[self].grad;
            auto& ga = t.nodes_[static_cast<size_t>(a)].grad;
            auto& gb = t.nodes_[static_cast<size_t>(b)].grad;
            for (size_t i = 0; i < g.numel(); ++i) {
                ga.v[i] += g.v[i];
                gb.v[i] += g.v[i];
            }
        });
    }

    /// Elementwise product; `b` may also be a 1-element tensor (scalar gate).
    Var mul(Var a, Var b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        if (bv.numel() == 1) {
            TensorData<T> out(av.shape);
            T s = bv.v[0];
            for (size_t i = 0; i < av.numel(); ++i) out.v[i] = av.v[i] * s;
            return push(std::move(out), [a, b](Tape& t, size_t self) {
                const auto& g = t.nodes_[self].grad;
                const auto& av = t.val(a);
                T s = t.val(b).v[0];
                auto& ga = t.nodes_[static_cast<size_t>(a)].grad;
                auto& gb = t.nodes_[static_cast<size_t>(b)].grad;
                T acc = T(0);
                for (size_t i = 0; i < g.numel(); ++i) {
                    ga.v[i] += g.v[i] * s;
                    acc += g.v[i] * av.v[i];
                }
                gb.v[0] += acc;
            });
        }
        require(av.shape == bv.shape, "mul: shape mismatch");
        TensorData<T> out(av.shape);
        for (size_t i = 0; i < av.numel(); ++i) out.v[i] = av.v[i] * bv.v[i];
        return push(std::move(out), [a, b](Tape& t, size_t self) {
            const auto& g = t.nodes_[self].grad;
            const auto& av = t.val(a);
            const auto& bv = t.val(b);
            auto& ga = t.nodes_[static_cast<size_t>(a)].grad;
            auto& gb = t.nodes_[static_cast<size_t>(b)].grad;
            for (size_t i = 0; i < g.numel(); ++i) {
                ga.v[i] += g.v[i] * bv.v[i];
                gb.v[i] += g.v[i] * av.v[i];
            }
        });
    }

    Var scale(Var x, T factor) {
        const auto& xv = val(x);
        TensorData<T> out(xv.shape);
        for (size_t i = 0; i < xv.numel(); ++i) out.v[i] = xv.v[i] * factor;
        return push(std::move(out), [x, factor](Tape& t, size_t self) {
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (size_t i = 0; i < g.numel(); ++i) gx.v[i] += g.v[i] * factor;
        });
    }

    // ---- reductions / normalization ----

    Var sum_all(Var x) {
        const auto& xv = val(x);
        TensorData<T> out(Shape{1});
        out.v[0] = std::accumulate(xv.v.begin(), xv.v.end(), T(0));
        return push(std::move(out), [x](Tape& t, size_t self) {
            T g = t.nodes_[self].grad.v[0];
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (size_t i = 0; i < gx.numel(); ++i) gx.v[i] += g;
        });
    }

    /// Scalar maximum over all elements; ties route the gradient to the
    /// first (row-major) maximizing element.
    Var max_reduce(Var x) {
        const auto& xv = val(x);
        require(xv.numel() > 0, "max_reduce: empty tensor");
        size_t arg = 0;
        for (size_t i = 1; i < xv.numel(); ++i)
            if (xv.v[i] > xv.v[arg]) arg = i;
        TensorData<T> out(Shape{1});
        out.v[0] = xv.v[arg];
        return push(std::move(out), [x, arg](Tape& t, size_t self) {
            t.nodes_[static_cast<size_t>(x)].grad.v[arg] += t.nodes_[self].grad.v[0];
        });
    }

    /// Joint softmax over every element of the tensor.
    Var softmax_all(Var x) {
        const auto& xv = val(x);
        TensorData<T> out(xv.shape);
        softmax_span(xv.v.data(), out.v.data(), xv.numel());
        return push(std::move(out), [x](Tape& t, size_t self) {
            const auto& y = t.nodes_[self].value;
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            softmax_backward_span(y.v.data(), g.v.data(), gx.v.data(), y.numel());
        });
    }

    /// Softmax over each row of a {rows, cols} tensor.
    Var softmax_rows(Var x) {
        const auto& xv = val(x);
        require(xv.shape.size() == 2, "softmax_rows: expected matrix");
        int rows = xv.dim(0), cols = xv.dim(1);
        TensorData<T> out(xv.shape);
        for (int r = 0; r < rows; ++r)
            softmax_span(xv.v.data() + static_cast<size_t>(r) * cols,
                         out.v.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols));
        return push(std::move(out), [x, rows, cols](Tape& t, size_t self) {
            const auto& y = t.nodes_[self].value;
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (int r = 0; r < rows; ++r) {
                size_t off = static_cast<size_t>(r) * cols;
                softmax_backward_span(y.v.data() + off, g.v.data() + off, gx.v.data() + off,
                                      static_cast<size_t>(cols));
            }
        });
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        require(av.shape.size() == 2 && bv.shape.size() == 2 && av.dim(1) == bv.dim(0),
                "matmul: incompatible shapes");
        int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
        TensorData<T> out(Shape{m, n});
        MatMap(out.v.data(), m, n) = ConstMatMap(av.v.data(), m, k) * ConstMatMap(bv.v.data(), k, n);
        return push(std::move(out), [a, b, m, k, n](Tape& t, size_t self) {
            ConstMatMap g(t.nodes_[self].grad.v.data(), m, n);
            ConstMatMap am(t.val(a).v.data(), m, k);
            ConstMatMap bm(t.val(b).v.data(), k, n);
            MatMap(t.nodes_[static_cast<size_t>(a)].grad.v.data(), m, k) += g * bm.transpose();
            MatMap(t.nodes_[static_cast<size_t>(b)].grad.v.data(), k, n) += am.transpose() * g;
        });
    }

    /// A * B^T for A {m,k}, B {n,k}.
    Var matmul_nt(Var a, Var b) {
        const auto& av = val(a);
        const auto& bv = val(b);
        require(av.shape.size() == 2 && bv.shape.size() == 2 && av.dim(1) == bv.dim(1),
                "matmul_nt: incompatible shapes");
        int m = av.dim(0), k = av.dim(1), n = bv.dim(0);
        TensorData<T> out(Shape{m, n});
        MatMap(out.v.data(), m, n) =
            ConstMatMap(av.v.data(), m, k) * ConstMatMap(bv.v.data(), n, k).transpose();
        return push(std::move(out), [a, b, m, k, n](Tape& t, size_t self) {
            ConstMatMap g(t.nodes_[self].grad.v.data(), m, n);
            ConstMatMap am(t.val(a).v.data(), m, k);
            ConstMatMap bm(t.val(b).v.data(), n, k);
            MatMap(t.nodes_[static_cast<size_t>(a)].grad.v.data(), m, k) += g * bm;
            MatMap(t.nodes_[static_cast<size_t>(b)].grad.v.data(), n, k) += g.transpose() * am;
        });
    }

    /// x {n,d} * w {d,e} + bias {e} broadcast over rows.
    Var affine(Var x, Var w, Var bias) {
        const auto& xv = val(x);
        const auto& wv = val(w);
        const auto& bv = val(bias);
        require(xv.shape.size() == 2 && wv.shape.size() == 2 && xv.dim(1) == wv.dim(0) &&
                    bv.numel() == static_cast<size_t>(wv.dim(1)),
                "affine: incompatible shapes");
        int n = xv.dim(0), d = xv.dim(1), e = wv.dim(1);
        TensorData<T> out(Shape{n, e});
        MatMap om(out.v.data(), n, e);
        om = ConstMatMap(xv.v.data(), n, d) * ConstMatMap(wv.v.data(), d, e);
        om.rowwise() += Eigen::Map<const Eigen::RowVectorX<T>>(bv.v.data(), e);
        return push(std::move(out), [x, w, bias, n, d, e](Tape& t, size_t self) {
            ConstMatMap g(t.nodes_[self].grad.v.data(), n, e);
            ConstMatMap xm(t.val(x).v.data(), n, d);
            ConstMatMap wm(t.val(w).v.data(), d, e);
            MatMap(t.nodes_[static_cast<size_t>(x)].grad.v.data(), n, d) += g * wm.transpose();
            MatMap(t.nodes_[static_cast<size_t>(w)].grad.v.data(), d, e) += xm.transpose() * g;
            Eigen::Map<Eigen::RowVectorX<T>>(t.nodes_[static_cast<size_t>(bias)].grad.v.data(), e) +=
                g.colwise().sum();
        });
    }

    // ---- shape ----

    Var reshape(Var x, Shape shape) {
        const auto& xv = val(x);
        require(shape_numel(shape) == xv.numel(), "reshape: element count mismatch");
        TensorData<T> out(std::move(shape), xv.v);
        return push(std::move(out), [x](Tape& t, size_t self) {
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (size_t i = 0; i < g.numel(); ++i) gx.v[i] += g.v[i];
        });
    }

    Var gather_rows(Var x, std::vector<int> rows) {
        const auto& xv = val(x);
        require(xv.shape.size() == 2, "gather_rows: expected matrix");
        int cols = xv.dim(1);
        for (int r : rows) require(r >= 0 && r < xv.dim(0), "gather_rows: index out of range");
        TensorData<T> out(Shape{static_cast<int>(rows.size()), cols});
        for (size_t i = 0; i < rows.size(); ++i)
            std::copy_n(xv.v.data() + static_cast<size_t>(rows[i]) * cols, cols,
                        out.v.data() + i * cols);
        return push(std::move(out), [x, rows = std::move(rows), cols](Tape& t, size_t self) {
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (size_t i = 0; i < rows.size(); ++i)
                for (int c = 0; c < cols; ++c)
                    gx.v[static_cast<size_t>(rows[i]) * cols + c] += g.v[i * cols + c];
        });
    }

    // ---- grid ops (shape {h, w, c}) ----

    /// 2D convolution with a {k, k, cin, cout} kernel laid out as
    /// {k*k*cin, cout}, plus bias {cout}. im2col + GEMM.
    Var conv2d(Var x, Var weight, Var bias, int k, int stride, int pad) {
        const auto& xv = val(x);
        const auto& wv = val(weight);
        require(xv.shape.size() == 3, "conv2d: expected {h,w,c} input");
        int h = xv.dim(0), w = xv.dim(1), cin = xv.dim(2);
        require(wv.shape.size() == 2 && wv.dim(0) == k * k * cin, "conv2d: bad kernel shape");
        int cout = wv.dim(1);
        require(val(bias).numel() == static_cast<size_t>(cout), "conv2d: bad bias shape");
        int ho = (h + 2 * pad - k) / stride + 1;
        int wo = (w + 2 * pad - k) / stride + 1;
        require(ho > 0 && wo > 0, "conv2d: output would be empty");

        auto cols = std::make_shared<TensorData<T>>(Shape{ho * wo, k * k * cin});
        im2col(xv, k, stride, pad, ho, wo, *cols);
        TensorData<T> out(Shape{ho, wo, cout});
        MatMap om(out.v.data(), ho * wo, cout);
        om = ConstMatMap(cols->v.data(), ho * wo, k * k * cin) *
             ConstMatMap(wv.v.data(), k * k * cin, cout);
        om.rowwise() += Eigen::Map<const Eigen::RowVectorX<T>>(val(bias).v.data(), cout);

        return push(std::move(out),
                    [x, weight, bias, k, stride, pad, h, w, cin, cout, ho, wo, cols](Tape& t, size_t self) {
            ConstMatMap g(t.nodes_[self].grad.v.data(), ho * wo, cout);
            MatMap(t.nodes_[static_cast<size_t>(weight)].grad.v.data(), k * k * cin, cout) +=
                ConstMatMap(cols->v.data(), ho * wo, k * k * cin).transpose() * g;
            Eigen::Map<Eigen::RowVectorX<T>>(t.nodes_[static_cast<size_t>(bias)].grad.v.data(), cout) +=
                g.colwise().sum();
            TensorData<T> dcols(Shape{ho * wo, k * k * cin});
            MatMap(dcols.v.data(), ho * wo, k * k * cin) =
                g * ConstMatMap(t.val(weight).v.data(), k * k * cin, cout).transpose();
            col2im(dcols, k, stride, pad, ho, wo, h, w, cin,
                   t.nodes_[static_cast<size_t>(x)].grad);
        });
    }

    /// 2x2 spatial max pooling with stride 2 (ceil mode at odd edges);
    /// gradient routes to the first (row-major) maximum in each window.
    Var max_pool2(Var x) {
        const auto& xv = val(x);
        require(xv.shape.size() == 3, "max_pool2: expected {h,w,c} input");
        int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
        int ho = (h + 1) / 2, wo = (w + 1) / 2;
        TensorData<T> out(Shape{ho, wo, c});
        auto args = std::make_shared<std::vector<size_t>>(out.numel());
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                for (int ch = 0; ch < c; ++ch) {
                    size_t best = 0;
                    T best_v = -std::numeric_limits<T>::infinity();
                    for (int dy = 0; dy < 2; ++dy) {
                        int y = oy * 2 + dy;
                        if (y >= h) continue;
                        for (int dx = 0; dx < 2; ++dx) {
                            int px = ox * 2 + dx;
                            if (px >= w) continue;
                            size_t idx = (static_cast<size_t>(y) * w + px) * c + ch;
                            if (xv.v[idx] > best_v) {
                                best_v = xv.v[idx];
                                best = idx;
                            }
                        }
                    }
                    size_t oidx = (static_cast<size_t>(oy) * wo + ox) * c + ch;
                    out.v[oidx] = best_v;
                    (*args)[oidx] = best;
                }
            }
        }
        return push(std::move(out), [x, args](Tape& t, size_t self) {
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (size_t i = 0; i < g.numel(); ++i) gx.v[(*args)[i]] += g.v[i];
        });
    }

    /// Pads a {h,w,c} grid with pad_y rows / pad_x cols per side, every
    /// padded cell equal to the c-vector `lambda`.
    Var pad_with_vector(Var x, Var lambda, int pad_x, int pad_y) {
        const auto& xv = val(x);
        const auto& lv = val(lambda);
        require(xv.shape.size() == 3, "pad_with_vector: expected {h,w,c} input");
        int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
        require(lv.numel() == static_cast<size_t>(c), "pad_with_vector: lambda size mismatch");
        int ho = h + 2 * pad_y, wo = w + 2 * pad_x;
        TensorData<T> out(Shape{ho, wo, c});
        for (int y = 0; y < ho; ++y) {
            for (int px = 0; px < wo; ++px) {
                T* dst = out.v.data() + (static_cast<size_t>(y) * wo + px) * c;
                int sy = y - pad_y, sx = px - pad_x;
                if (sy >= 0 && sy < h && sx >= 0 && sx < w)
                    std::copy_n(xv.v.data() + (static_cast<size_t>(sy) * w + sx) * c, c, dst);
                else
                    std::copy_n(lv.v.data(), c, dst);
            }
        }
        return push(std::move(out), [x, lambda, pad_x, pad_y, h, w, c, ho, wo](Tape& t, size_t self) {
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            auto& gl = t.nodes_[static_cast<size_t>(lambda)].grad;
            for (int y = 0; y < ho; ++y) {
                for (int px = 0; px < wo; ++px) {
                    const T* src = g.v.data() + (static_cast<size_t>(y) * wo + px) * c;
                    int sy = y - pad_y, sx = px - pad_x;
                    if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
                        T* dst = gx.v.data() + (static_cast<size_t>(sy) * w + sx) * c;
                        for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                    } else {
                        for (int ch = 0; ch < c; ++ch) gl.v[ch] += src[ch];
                    }
                }
            }
        });
    }

    /// Bilinear samples of a {h,w,c} grid at fixed points given in
    /// cell-center coordinates (the value of cell (r,c) lives at
    /// (c+0.5, r+0.5)); queries clamp to the hull of centers. Output {n,c}.
    Var bilinear_sample_rows(Var grid, const std::vector<Vec2>& points) {
        const auto& gv = val(grid);
        require(gv.shape.size() == 3, "bilinear_sample_rows: expected {h,w,c} grid");
        int h = gv.dim(0), w = gv.dim(1), c = gv.dim(2);
        struct Corner {
            size_t idx;
            T weight;
        };
        auto corners = std::make_shared<std::vector<std::array<Corner, 4>>>(points.size());
        TensorData<T> out(Shape{static_cast<int>(points.size()), c});
        for (size_t n = 0; n < points.size(); ++n) {
            double hx = std::clamp(points[n].x() - 0.5, 0.0, static_cast<double>(w - 1));
            double hy = std::clamp(points[n].y() - 0.5, 0.0, static_cast<double>(h - 1));
            int x0 = std::min(static_cast<int>(hx), w - 2);
            int y0 = std::min(static_cast<int>(hy), h - 2);
            x0 = std::max(x0, 0);
            y0 = std::max(y0, 0);
            int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            T fx = static_cast<T>(hx - x0), fy = static_cast<T>(hy - y0);
            std::array<Corner, 4>& cs = (*corners)[n];
            cs[0] = {(static_cast<size_t>(y0) * w + x0) * c, (T(1) - fx) * (T(1) - fy)};
            cs[1] = {(static_cast<size_t>(y0) * w + x1) * c, fx * (T(1) - fy)};
            cs[2] = {(static_cast<size_t>(y1) * w + x0) * c, (T(1) - fx) * fy};
            cs[3] = {(static_cast<size_t>(y1) * w + x1) * c, fx * fy};
            T* dst = out.v.data() + n * c;
            for (const Corner& corner : cs)
                for (int ch = 0; ch < c; ++ch) dst[ch] += corner.weight * gv.v[corner.idx + ch];
        }
        return push(std::move(out), [grid, corners, c](Tape& t, size_t self) {
            const auto& g = t.nodes_[self].grad;
            auto& gg = t.nodes_[static_cast<size_t>(grid)].grad;
            for (size_t n = 0; n < corners->size(); ++n) {
                const T* src = g.v.data() + n * c;
                for (const auto& corner : (*corners)[n])
                    for (int ch = 0; ch < c; ++ch) gg.v[corner.idx + ch] += corner.weight * src[ch];
            }
        });
    }

    /// Row-wise bilinear sampling: row i of x, viewed as an {h, w} grid in
    /// cell-center coordinates, sampled at points[i]. Output {n, 1}.
    Var bilinear_sample_own_rows(Var x, int h, int w, const std::vector<Vec2>& points) {
        const auto& xv = val(x);
        require(xv.shape.size() == 2 && xv.dim(1) == h * w &&
                    xv.dim(0) == static_cast<int>(points.size()),
                "bilinear_sample_own_rows: shape mismatch");
        struct Corner {
            int idx;
            T weight;
        };
        auto corners = std::make_shared<std::vector<std::array<Corner, 4>>>(points.size());
        TensorData<T> out(Shape{static_cast<int>(points.size()), 1});
        for (size_t n = 0; n < points.size(); ++n) {
            double hx = std::clamp(points[n].x() - 0.5, 0.0, static_cast<double>(w - 1));
            double hy = std::clamp(points[n].y() - 0.5, 0.0, static_cast<double>(h - 1));
            int x0 = std::clamp(static_cast<int>(hx), 0, std::max(w - 2, 0));
            int y0 = std::clamp(static_cast<int>(hy), 0, std::max(h - 2, 0));
            int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            T fx = static_cast<T>(hx - x0), fy = static_cast<T>(hy - y0);
            std::array<Corner, 4>& cs = (*corners)[n];
            cs[0] = {y0 * w + x0, (T(1) - fx) * (T(1) - fy)};
            cs[1] = {y0 * w + x1, fx * (T(1) - fy)};
            cs[2] = {y1 * w + x0, (T(1) - fx) * fy};
            cs[3] = {y1 * w + x1, fx * fy};
            const T* row = xv.v.data() + n * static_cast<size_t>(h) * w;
            T acc = T(0);
            for (const Corner& corner : cs) acc += corner.weight * row[corner.idx];
            out.v[n] = acc;
        }
        return push(std::move(out), [x, corners, h, w](Tape& t, size_t self) {
            const auto& g = t.nodes_[self].grad;
            auto& gx = t.nodes_[static_cast<size_t>(x)].grad;
            for (size_t n = 0; n < corners->size(); ++n) {
                T* row = gx.v.data() + n * static_cast<size_t>(h) * w;
                for (const auto& corner : (*corners)[n]) row[corner.idx] += corner.weight * g.v[n];
            }
        });
    }

    // ---- driver ----

    /// Runs reverse accumulation from a scalar loss node.
    void backward(Var loss) {
        require(val(loss).numel() == 1, "backward: loss must be scalar");
        for (auto& node : nodes_) std::fill(node.grad.v.begin(), node.grad.v.end(), T(0));
        nodes_[static_cast<size_t>(loss)].grad.v[0] = T(1);
        for (size_t i = nodes_.size(); i-- > 0;)
            if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }

private:
    struct Node {
        TensorData<T> value;
        TensorData<T> grad;
        std::function<void(Tape&, size_t)> backward;
    };

    const TensorData<T>& val(Var id) const { return nodes_[static_cast<size_t>(id)].value; }

    static void require(bool ok, const char* message) {
        if (!ok) raise(ErrorCode::ShapeMismatch, message);
    }

    static void softmax_span(const T* x, T* y, size_t n) {
        T m = x[0];
        for (size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
        T sum = T(0);
        for (size_t i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - m);
            sum += y[i];
        }
        for (size_t i = 0; i < n; ++i) y[i] /= sum;
    }

    static void softmax_backward_span(const T* y, const T* g, T* gx, size_t n) {
        T dot = T(0);
        for (size_t i = 0; i < n; ++i) dot += y[i] * g[i];
        for (size_t i = 0; i < n; ++i) gx[i] += y[i] * (g[i] - dot);
    }

    static void im2col(const TensorData<T>& x, int k, int stride, int pad, int ho, int wo,
                       TensorData<T>& cols) {
        int h = x.dim(0), w = x.dim(1), c = x.dim(2);
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                T* dst = cols.v.data() + (static_cast<size_t>(oy) * wo + ox) * (k * k * c);
                for (int ky = 0; ky < k; ++ky) {
                    int y = oy * stride - pad + ky;
                    for (int kx = 0; kx < k; ++kx, dst += c) {
                        int px = ox * stride - pad + kx;
                        if (y < 0 || y >= h || px < 0 || px >= w) continue;  // zero padding
                        std::copy_n(x.v.data() + (static_cast<size_t>(y) * w + px) * c, c, dst);
                    }
                }
            }
        }
    }

    static void col2im(const TensorData<T>& dcols, int k, int stride, int pad, int ho, int wo,
                       int h, int w, int c, TensorData<T>& dx) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const T* src = dcols.v.data() + (static_cast<size_t>(oy) * wo + ox) * (k * k * c);
                for (int ky = 0; ky < k; ++ky) {
                    int y = oy * stride - pad + ky;
                    for (int kx = 0; kx < k; ++kx, src += c) {
                        int px = ox * stride - pad + kx;
                        if (y < 0 || y >= h || px < 0 || px >= w) continue;
                        T* dst = dx.v.data() + (static_cast<size_t>(y) * w + px) * c;
                        for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                    }
                }
            }
        }
    }

    Var push(TensorData<T> value, std::function<void(Tape&, size_t)> backward) {
        if (check_finite_)
            for (T v : value.v)
                if (!std::isfinite(static_cast<double>(v)))
                    raise(ErrorCode::NonFiniteInput, "non-finite tensor value");
        Node node;
        node.grad = TensorData<T>(value.shape);
        node.value = std::move(value);
        node.backward = std::move(backward);
        nodes_.push_back(std::move(node));
        return static_cast<Var>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    bool check_finite_;
};

/// Central-difference gradient check for a scalar function of one tensor.
/// `build` receives a tape and the input var and returns the loss var.
/// Returns the maximum relative error between tape and finite-difference
/// gradients, with rel(a, b) = |a-b| / max(|a|, |b|, 1e-6).
template <typename F>
double grad_check(F&& build, const TensorData<double>& x, double h_base = 1e-4) {
    Tape<double> tape;
    Var xv = tape.input(x);
    Var loss = build(tape, xv);
    tape.backward(loss);
    std::vector<double> analytic = tape.grad(xv).v;

    double max_err = 0.0;
    TensorData<double> probe = x;
    for (size_t i = 0; i < x.numel(); ++i) {
        double h = h_base * (1.0 + std::abs(x.v[i]));
        double orig = probe.v[i];
        probe.v[i] = orig + h;
        Tape<double> tp;
        double fp = tp.value(build(tp, tp.input(probe))).v[0];
        probe.v[i] = orig - h;
        Tape<double> tm;
        double fm = tm.value(build(tm, tm.input(probe))).v[0];
        probe.v[i] = orig;
        double fd = (fp - fm) / (2.0 * h);
        double err = std::abs(analytic[i] - fd) /
                     std::max({std::abs(analytic[i]), std::abs(fd), 1e-6});
        max_err = std::max(max_err, err);
    }
    return max_err;
}

/// Gradient check over several inputs at once (e.g. all network parameters).
template <typename F>
double grad_check_multi(F&& build, const std::vector<TensorData<double>>& inputs,
                        double h_base = 1e-4) {
    Tape<double> tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& x : inputs) vars.push_back(tape.input(x));
    Var loss = build(tape, vars);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(vars.size());
    for (Var v : vars) analytic.push_back(tape.grad(v).v);

    auto eval = [&](const std::vector<TensorData<double>>& probe) {
        Tape<double> t;
        std::vector<Var> vs;
        vs.reserve(probe.size());
        for (const auto& x : probe) vs.push_back(t.input(x));
        return t.value(build(t, vs)).v[0];
    };

    double max_err = 0.0;
    std::vector<TensorData<double>> probe = inputs;
    for (size_t t_i = 0; t_i < inputs.size(); ++t_i) {
        for (size_t i = 0; i < inputs[t_i].numel(); ++i) {
            double h = h_base * (1.0 + std::abs(inputs[t_i].v[i]));
            double orig = probe[t_i].v[i];
            probe[t_i].v[i] = orig + h;
            double fp = eval(probe);
            probe[t_i].v[i] = orig - h;
            double fm = eval(probe);
            probe[t_i].v[i] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double err = std::abs(analytic[t_i][i] - fd) /
                         std::max({std::abs(analytic[t_i][i]), std::abs(fd), 1e-6});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

/// Fills a tensor with N(0, std) entries.
template <typename T>
TensorData<T> random_normal(Shape shape, double std_dev, Rng& rng) {
    TensorData<T> out(std::move(shape));
    for (auto& v : out.v) v = static_cast<T>(rng.normal() * std_dev);
    return out;
}

}  // namespace corrhal::ad
