#include "msscanet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "msscanet/errors.hpp"

namespace msscanet {

namespace {

thread_local int64_t* g_mac_sink = nullptr;
thread_local KinkWatch* g_kink_watch = nullptr;

inline void count_macs(int64_t n) {
    if (g_mac_sink) *g_mac_sink += n;
}

inline void note_kink(double margin) {
    if (g_kink_watch && margin < g_kink_watch->min_margin) g_kink_watch->min_margin = margin;
}

// Builds the result tensor and, only when some input requires grad, attaches
// the tape node. `make_backward` receives a weak pointer to the result so the
// closure does not keep the node alive.
template <typename F>
TensorPtr make_result(Shape shape, std::vector<double> data, const char* op,
                      std::vector<TensorPtr> ins, F&& make_backward) {
    bool rg = false;
    for (const auto& t : ins) rg = rg || t->requires_grad;
    auto out = std::make_shared<Tensor>(std::move(shape), std::move(data), rg);
    if (rg) {
        out->op = op;
        out->inputs = std::move(ins);
        out->backward_fn = make_backward(std::weak_ptr<Tensor>(out));
    }
    return out;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

}  // namespace

int64_t shape_size(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (shape_size(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    for (int64_t e : shape)
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape));
    return data[0];
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::accumulate_grad(const double* g, int64_t n) {
    if (n != size()) throw ShapeError("gradient size mismatch");
    if (grad.empty()) grad.assign(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < n; ++i) grad[static_cast<size_t>(i)] += g[i];
}

TensorPtr tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
}

TensorPtr zeros(Shape shape, bool requires_grad) {
    const auto n = static_cast<size_t>(shape_size(shape));
    return tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr full(Shape shape, double value, bool requires_grad) {
    const auto n = static_cast<size_t>(shape_size(shape));
    return tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

TensorPtr scalar(double value, bool requires_grad) {
    return tensor({1}, {value}, requires_grad);
}

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

int64_t* set_mac_sink(int64_t* sink) {
    int64_t* prev = g_mac_sink;
    g_mac_sink = sink;
    return prev;
}

KinkWatch* set_kink_watch(KinkWatch* w) {
    KinkWatch* prev = g_kink_watch;
    g_kink_watch = w;
    return prev;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require(a->shape == b->shape,
            "add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    std::vector<double> d(a->data);
    for (int64_t i = 0; i < a->size(); ++i) d[static_cast<size_t>(i)] += b->data[static_cast<size_t>(i)];
    return make_result(a->shape, std::move(d), "add", {a, b}, [a, b](std::weak_ptr<Tensor> wout) {
        return [a, b, wout]() {
            auto out = wout.lock();
            if (!out) return;
            if (a->requires_grad) a->accumulate_grad(out->grad.data(), out->size());
            if (b->requires_grad) b->accumulate_grad(out->grad.data(), out->size());
        };
    });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require(a->shape == b->shape,
            "sub: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    std::vector<double> d(a->data);
    for (int64_t i = 0; i < a->size(); ++i) d[static_cast<size_t>(i)] -= b->data[static_cast<size_t>(i)];
    return make_result(a->shape, std::move(d), "sub", {a, b}, [a, b](std::weak_ptr<Tensor> wout) {
        return [a, b, wout]() {
            auto out = wout.lock();
            if (!out) return;
            if (a->requires_grad) a->accumulate_grad(out->grad.data(), out->size());
            if (b->requires_grad) {
                std::vector<double> g(out->grad.size());
                for (size_t i = 0; i < g.size(); ++i) g[i] = -out->grad[i];
                b->accumulate_grad(g.data(), out->size());
            }
        };
    });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require(a->shape == b->shape,
            "mul: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    std::vector<double> d(a->data);
    for (int64_t i = 0; i < a->size(); ++i) d[static_cast<size_t>(i)] *= b->data[static_cast<size_t>(i)];
    return make_result(a->shape, std::move(d), "mul", {a, b}, [a, b](std::weak_ptr<Tensor> wout) {
        return [a, b, wout]() {
            auto out = wout.lock();
            if (!out) return;
            const int64_t n = out->size();
            if (a->requires_grad) {
                std::vector<double> g(static_cast<size_t>(n));
                for (int64_t i = 0; i < n; ++i)
                    g[static_cast<size_t>(i)] = out->grad[static_cast<size_t>(i)] * b->data[static_cast<size_t>(i)];
                a->accumulate_grad(g.data(), n);
            }
            if (b->requires_grad) {
                std::vector<double> g(static_cast<size_t>(n));
                for (int64_t i = 0; i < n; ++i)
                    g[static_cast<size_t>(i)] = out->grad[static_cast<size_t>(i)] * a->data[static_cast<size_t>(i)];
                b->accumulate_grad(g.data(), n);
            }
        };
    });
}

TensorPtr scale(const TensorPtr& a, double c) {
    std::vector<double> d(a->data);
    for (auto& v : d) v *= c;
    return make_result(a->shape, std::move(d), "scale", {a}, [a, c](std::weak_ptr<Tensor> wout) {
        return [a, c, wout]() {
            auto out = wout.lock();
            if (!out || !a->requires_grad) return;
            std::vector<double> g(out->grad.size());
            for (size_t i = 0; i < g.size(); ++i) g[i] = c * out->grad[i];
            a->accumulate_grad(g.data(), out->size());
        };
    });
}

TensorPtr square(const TensorPtr& a) {
    std::vector<double> d(a->data);
    for (auto& v : d) v *= v;
    return make_result(a->shape, std::move(d), "square", {a}, [a](std::weak_ptr<Tensor> wout) {
        return [a, wout]() {
            auto out = wout.lock();
            if (!out || !a->requires_grad) return;
            const int64_t n = out->size();
            std::vector<double> g(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i)
                g[static_cast<size_t>(i)] = 2.0 * a->data[static_cast<size_t>(i)] * out->grad[static_cast<size_t>(i)];
            a->accumulate_grad(g.data(), n);
        };
    });
}

TensorPtr abs_val(const TensorPtr& a) {
    std::vector<double> d(a->data);
    for (auto& v : d) {
        note_kink(std::abs(v));
        v = std::abs(v);
    }
    return make_result(a->shape, std::move(d), "abs", {a}, [a](std::weak_ptr<Tensor> wout) {
        return [a, wout]() {
            auto out = wout.lock();
            if (!out || !a->requires_grad) return;
            const int64_t n = out->size();
            std::vector<double> g(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) {
                const double x = a->data[static_cast<size_t>(i)];
                const double s = (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                g[static_cast<size_t>(i)] = s * out->grad[static_cast<size_t>(i)];
            }
            a->accumulate_grad(g.data(), n);
        };
    });
}

TensorPtr relu(const TensorPtr& a) {
    std::vector<double> d(a->data);
    for (auto& v : d) {
        note_kink(std::abs(v));
        v = v > 0.0 ? v : 0.0;
    }
    return make_result(a->shape, std::move(d), "relu", {a}, [a](std::weak_ptr<Tensor> wout) {
        return [a, wout]() {
            auto out = wout.lock();
            if (!out || !a->requires_grad) return;
            const int64_t n = out->size();
            std::vector<double> g(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i)
                g[static_cast<size_t>(i)] =
                    a->data[static_cast<size_t>(i)] > 0.0 ? out->grad[static_cast<size_t>(i)] : 0.0;
            a->accumulate_grad(g.data(), n);
        };
    });
}

TensorPtr sigmoid(const TensorPtr& a) {
    std::vector<double> d(a->data);
    for (auto& v : d) {
        const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        // Keep the output strictly inside (0,1) even where the quotient
        // rounds to an endpoint.
        if (y >= 1.0)
            v = std::nextafter(1.0, 0.0);
        else if (y <= 0.0)
            v = std::nextafter(0.0, 1.0);
        else
            v = y;
    }
    return make_result(a->shape, std::move(d), "sigmoid", {a}, [a](std::weak_ptr<Tensor> wout) {
        return [a, wout]() {
            auto out = wout.lock();
            if (!out || !a->requires_grad) return;
            const int64_t n = out->size();
            std::vector<double> g(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) {
                const double y = out->data[static_cast<size_t>(i)];
                g[static_cast<size_t>(i)] = y * (1.0 - y) * out->grad[static_cast<size_t>(i)];
            }
            a->accumulate_grad(g.data(), n);
        };
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require(a->rank() == 2 && b->rank() == 2,
            "matmul: expects rank-2 operands, got " + shape_str(a->shape) + " and " + shape_str(b->shape));
    const int64_t n = a->shape[0], k = a->shape[1], k2 = b->shape[0], m = b->shape[1];
    require(k == k2, "matmul: inner extents differ, " + shape_str(a->shape) + " x " + shape_str(b->shape));
    count_macs(n * k * m);

    std::vector<double> d(static_cast<size_t>(n * m), 0.0);
    const double* A = a->data.data();
    const double* B = b->data.data();
    for (int64_t i = 0; i < n; ++i) {
        double* crow = d.data() + i * m;
        const double* arow = A + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = B + kk * m;
            for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return make_result({n, m}, std::move(d), "matmul", {a, b},
                       [a, b, n, k, m](std::weak_ptr<Tensor> wout) {
        return [a, b, n, k, m, wout]() {
            auto out = wout.lock();
            if (!out) return;
            const double* G = out->grad.data();
            if (a->requires_grad) {
                // dA = G * B^T
                std::vector<double> ga(static_cast<size_t>(n * k), 0.0);
                for (int64_t i = 0; i < n; ++i) {
                    const double* grow = G + i * m;
                    double* garow = ga.data() + i * k;
                    for (int64_t kk = 0; kk < k; ++kk) {
                        const double* brow = b->data.data() + kk * m;
                        double s = 0.0;
                        for (int64_t j = 0; j < m; ++j) s += grow[j] * brow[j];
                        garow[kk] += s;
                    }
                }
                a->accumulate_grad(ga.data(), n * k);
            }
            if (b->requires_grad) {
                // dB = A^T * G
                std::vector<double> gb(static_cast<size_t>(k * m), 0.0);
                for (int64_t i = 0; i < n; ++i) {
                    const double* arow = a->data.data() + i * k;
                    const double* grow = G + i * m;
                    for (int64_t kk = 0; kk < k; ++kk) {
                        const double av = arow[kk];
                        double* gbrow = gb.data() + kk * m;
                        for (int64_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
                    }
                }
                b->accumulate_grad(gb.data(), k * m);
            }
        };
    });
}

TensorPtr transpose2d(const TensorPtr& a) {
    require(a->rank() == 2, "transpose2d: expects rank-2, got " + shape_str(a->shape));
    const int64_t n = a->shape[0], m = a->shape[1];
    std::vector<double> d(static_cast<size_t>(n * m));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) d[static_cast<size_t>(j * n + i)] = a->data[static_cast<size_t>(i * m + j)];
    return make_result({m, n}, std::move(d), "transpose", {a}, [a, n, m](std::weak_ptr<Tensor> wout) {
        return [a, n, m, wout]() {
            auto out = wout.lock();
            if (!out || !a->requires_grad) return;
            std::vector<double> g(static_cast<size_t>(n * m));
            for (int64_t j = 0; j < m; ++j)
                for (int64_t i = 0; i < n; ++i)
                    g[static_cast<size_t>(i * m + j)] = out->grad[static_cast<size_t>(j * n + i)];
            a->accumulate_grad(g.data(), n * m);
        };
    });
}

TensorPtr add_row_bias(const TensorPtr& x, const TensorPtr& bias) {
    require(x->rank() == 2 && bias->rank() == 1 && bias->shape[0] == x->shape[1],
            "add_row_bias: " + shape_str(x->shape) + " with bias " + shape_str(bias->shape));
    const int64_t n = x->shape[0], k = x->shape[1];
    std::vector<double> d(x->data);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j) d[static_cast<size_t>(i * k + j)] += bias->data[static_cast<size_t>(j)];
    return make_result(x->shape, std::move(d), "add_row_bias", {x, bias},
                       [x, bias, n, k](std::weak_ptr<Tensor> wout) {
        return [x, bias, n, k, wout]() {
            auto out = wout.lock();
            if (!out) return;
            if (x->requires_grad) x->accumulate_grad(out->grad.data(), out->size());
            if (bias->requires_grad) {
                std::vector<double> g(static_cast<size_t>(k), 0.0);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < k; ++j) g[static_cast<size_t>(j)] += out->grad[static_cast<size_t>(i * k + j)];
                bias->accumulate_grad(g.data(), k);
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Shape / indexing
// ---------------------------------------------------------------------------

TensorPtr reshape(const TensorPtr& a, Shape new_shape) {
    require(shape_size(new_shape) == a->size(),
            "reshape: cannot view " + shape_str(a->shape) + " as " + shape_str(new_shape));
    std::vector<double> d(a->data);
    return make_result(std::move(new_shape), std::move(d), "reshape", {a},
                       [a](std::weak_ptr<Tensor> wout) {
        return [a, wout]() {
            auto out = wout.lock();
            if (!out || !a->requires_grad) return;
            a->accumulate_grad(out->grad.data(), out->size());
        };
    });
}

TensorPtr gather_flat(const TensorPtr& x, std::shared_ptr<const std::vector<int64_t>> perm,
                      Shape out_shape) {
    require(shape_size(out_shape) == static_cast<int64_t>(perm->size()),
            "gather_flat: index count does not match output shape " + shape_str(out_shape));
    std::vector<double> d(perm->size());
    const int64_t n = x->size();
    for (size_t i = 0; i < perm->size(); ++i) {
        const int64_t src = (*perm)[i];
        require(src >= 0 && src < n, "gather_flat: index out of range");
        d[i] = x->data[static_cast<size_t>(src)];
    }
    return make_result(std::move(out_shape), std::move(d), "gather_flat", {x},
                       [x, perm](std::weak_ptr<Tensor> wout) {
        return [x, perm, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            std::vector<double> g(static_cast<size_t>(x->size()), 0.0);
            for (size_t i = 0; i < perm->size(); ++i) g[static_cast<size_t>((*perm)[i])] += out->grad[i];
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr gather_rows(const TensorPtr& x, std::vector<int64_t> rows) {
    require(x->rank() == 2, "gather_rows: expects rank-2, got " + shape_str(x->shape));
    const int64_t n = x->shape[0], d = x->shape[1];
    const int64_t k = static_cast<int64_t>(rows.size());
    std::vector<double> out(static_cast<size_t>(k * d));
    for (int64_t i = 0; i < k; ++i) {
        require(rows[static_cast<size_t>(i)] >= 0 && rows[static_cast<size_t>(i)] < n,
                "gather_rows: row index out of range");
        std::copy_n(x->data.data() + rows[static_cast<size_t>(i)] * d, d, out.data() + i * d);
    }
    auto idx = std::make_shared<std::vector<int64_t>>(std::move(rows));
    return make_result({k, d}, std::move(out), "gather_rows", {x},
                       [x, idx, k, d](std::weak_ptr<Tensor> wout) {
        return [x, idx, k, d, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            std::vector<double> g(static_cast<size_t>(x->size()), 0.0);
            for (int64_t i = 0; i < k; ++i) {
                double* dst = g.data() + (*idx)[static_cast<size_t>(i)] * d;
                const double* src = out->grad.data() + i * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr slice_rows(const TensorPtr& x, int64_t start, int64_t count) {
    require(x->rank() == 2, "slice_rows: expects rank-2, got " + shape_str(x->shape));
    const int64_t n = x->shape[0], d = x->shape[1];
    require(start >= 0 && count >= 1 && start + count <= n, "slice_rows: range out of bounds");
    std::vector<double> out(x->data.begin() + static_cast<size_t>(start * d),
                            x->data.begin() + static_cast<size_t>((start + count) * d));
    return make_result({count, d}, std::move(out), "slice_rows", {x},
                       [x, start, count, d](std::weak_ptr<Tensor> wout) {
        return [x, start, count, d, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            std::vector<double> g(static_cast<size_t>(x->size()), 0.0);
            std::copy_n(out->grad.data(), count * d, g.data() + start * d);
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr slice_cols(const TensorPtr& x, int64_t start, int64_t count) {
    require(x->rank() == 2, "slice_cols: expects rank-2, got " + shape_str(x->shape));
    const int64_t n = x->shape[0], d = x->shape[1];
    require(start >= 0 && count >= 1 && start + count <= d, "slice_cols: range out of bounds");
    std::vector<double> out(static_cast<size_t>(n * count));
    for (int64_t i = 0; i < n; ++i)
        std::copy_n(x->data.data() + i * d + start, count, out.data() + i * count);
    return make_result({n, count}, std::move(out), "slice_cols", {x},
                       [x, start, count, n, d](std::weak_ptr<Tensor> wout) {
        return [x, start, count, n, d, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            std::vector<double> g(static_cast<size_t>(x->size()), 0.0);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < count; ++j)
                    g[static_cast<size_t>(i * d + start + j)] = out->grad[static_cast<size_t>(i * count + j)];
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
    require(!parts.empty(), "concat_rows: no parts");
    Shape tail(parts[0]->shape.begin() + 1, parts[0]->shape.end());
    int64_t rows = 0;
    for (const auto& p : parts) {
        Shape t(p->shape.begin() + 1, p->shape.end());
        require(p->rank() >= 1 && t == tail, "concat_rows: trailing extents differ");
        rows += p->shape[0];
    }
    const int64_t stride = shape_size(tail);
    std::vector<double> d;
    d.reserve(static_cast<size_t>(rows * stride));
    for (const auto& p : parts) d.insert(d.end(), p->data.begin(), p->data.end());
    Shape out_shape;
    out_shape.push_back(rows);
    out_shape.insert(out_shape.end(), tail.begin(), tail.end());
    return make_result(std::move(out_shape), std::move(d), "concat_rows", parts,
                       [parts](std::weak_ptr<Tensor> wout) {
        return [parts, wout]() {
            auto out = wout.lock();
            if (!out) return;
            int64_t offset = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) p->accumulate_grad(out->grad.data() + offset, p->size());
                offset += p->size();
            }
        };
    });
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    require(!parts.empty(), "concat_cols: no parts");
    const int64_t n = parts[0]->shape[0];
    int64_t total = 0;
    for (const auto& p : parts) {
        require(p->rank() == 2 && p->shape[0] == n, "concat_cols: row counts differ");
        total += p->shape[1];
    }
    std::vector<double> d(static_cast<size_t>(n * total));
    int64_t col = 0;
    for (const auto& p : parts) {
        const int64_t w = p->shape[1];
        for (int64_t i = 0; i < n; ++i)
            std::copy_n(p->data.data() + i * w, w, d.data() + i * total + col);
        col += w;
    }
    return make_result({n, total}, std::move(d), "concat_cols", parts,
                       [parts, n, total](std::weak_ptr<Tensor> wout) {
        return [parts, n, total, wout]() {
            auto out = wout.lock();
            if (!out) return;
            int64_t col = 0;
            for (const auto& p : parts) {
                const int64_t w = p->shape[1];
                if (p->requires_grad) {
                    std::vector<double> g(static_cast<size_t>(n * w));
                    for (int64_t i = 0; i < n; ++i)
                        std::copy_n(out->grad.data() + i * total + col, w, g.data() + i * w);
                    p->accumulate_grad(g.data(), n * w);
                }
                col += w;
            }
        };
    });
}

namespace {
std::shared_ptr<std::vector<int64_t>> chw_perm(int64_t d, int64_t h, int64_t w, bool to_chw) {
    auto perm = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(d * h * w));
    // tokens layout: [(i*w+j), c]; chw layout: [c, i, j]
    for (int64_t c = 0; c < d; ++c)
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                const int64_t tok = (i * w + j) * d + c;
                const int64_t map = (c * h + i) * w + j;
                if (to_chw)
                    (*perm)[static_cast<size_t>(map)] = tok;
                else
                    (*perm)[static_cast<size_t>(tok)] = map;
            }
    return perm;
}
}  // namespace

TensorPtr tokens_to_chw(const TensorPtr& tokens, int64_t grid_h, int64_t grid_w) {
    require(tokens->rank() == 2 && tokens->shape[0] == grid_h * grid_w,
            "tokens_to_chw: " + shape_str(tokens->shape) + " does not match grid " +
                std::to_string(grid_h) + "x" + std::to_string(grid_w));
    const int64_t d = tokens->shape[1];
    return gather_flat(tokens, chw_perm(d, grid_h, grid_w, true), {d, grid_h, grid_w});
}

TensorPtr chw_to_tokens(const TensorPtr& chw) {
    require(chw->rank() == 3, "chw_to_tokens: expects rank-3, got " + shape_str(chw->shape));
    const int64_t d = chw->shape[0], h = chw->shape[1], w = chw->shape[2];
    return gather_flat(chw, chw_perm(d, h, w, false), {h * w, d});
}

// ---------------------------------------------------------------------------
// Reductions / normalization
// ---------------------------------------------------------------------------

TensorPtr softmax(const TensorPtr& x, int64_t axis) {
    require(axis >= 0 && axis < x->rank(),
            "softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(x->shape));
    const int64_t len = x->shape[static_cast<size_t>(axis)];
    int64_t inner = 1, outer = 1;
    for (int64_t i = axis + 1; i < x->rank(); ++i) inner *= x->shape[static_cast<size_t>(i)];
    for (int64_t i = 0; i < axis; ++i) outer *= x->shape[static_cast<size_t>(i)];

    std::vector<double> d(x->data.size());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i < len; ++i) mx = std::max(mx, x->data[static_cast<size_t>(base + i * inner)]);
            double sum = 0.0;
            for (int64_t i = 0; i < len; ++i) {
                const double e = std::exp(x->data[static_cast<size_t>(base + i * inner)] - mx);
                d[static_cast<size_t>(base + i * inner)] = e;
                sum += e;
            }
            for (int64_t i = 0; i < len; ++i) d[static_cast<size_t>(base + i * inner)] /= sum;
        }
    }
    return make_result(x->shape, std::move(d), "softmax", {x},
                       [x, len, inner, outer](std::weak_ptr<Tensor> wout) {
        return [x, len, inner, outer, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            std::vector<double> g(x->data.size());
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (int64_t i = 0; i < len; ++i) {
                        const size_t k = static_cast<size_t>(base + i * inner);
                        dot += out->grad[k] * out->data[k];
                    }
                    for (int64_t i = 0; i < len; ++i) {
                        const size_t k = static_cast<size_t>(base + i * inner);
                        g[k] = out->data[k] * (out->grad[k] - dot);
                    }
                }
            }
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr sum_all(const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->data) s += v;
    return make_result({1}, {s}, "sum_all", {x}, [x](std::weak_ptr<Tensor> wout) {
        return [x, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            std::vector<double> g(static_cast<size_t>(x->size()), out->grad[0]);
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr mean_all(const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->data) s += v;
    const double inv = 1.0 / static_cast<double>(x->size());
    return make_result({1}, {s * inv}, "mean_all", {x}, [x, inv](std::weak_ptr<Tensor> wout) {
        return [x, inv, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            std::vector<double> g(static_cast<size_t>(x->size()), out->grad[0] * inv);
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr mean_rows(const TensorPtr& x) {
    require(x->rank() == 2, "mean_rows: expects rank-2, got " + shape_str(x->shape));
    const int64_t n = x->shape[0], d = x->shape[1];
    std::vector<double> out(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(j)] += x->data[static_cast<size_t>(i * d + j)];
    for (auto& v : out) v /= static_cast<double>(n);
    return make_result({1, d}, std::move(out), "mean_rows", {x},
                       [x, n, d](std::weak_ptr<Tensor> wout) {
        return [x, n, d, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            const double inv = 1.0 / static_cast<double>(n);
            std::vector<double> g(static_cast<size_t>(n * d));
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < d; ++j)
                    g[static_cast<size_t>(i * d + j)] = out->grad[static_cast<size_t>(j)] * inv;
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta, double eps) {
    require(x->rank() == 2, "layer_norm: expects rank-2, got " + shape_str(x->shape));
    const int64_t n = x->shape[0], d = x->shape[1];
    require(gamma->rank() == 1 && gamma->shape[0] == d && beta->rank() == 1 && beta->shape[0] == d,
            "layer_norm: gamma/beta must have shape [" + std::to_string(d) + "]");
    require(eps > 0.0, "layer_norm: eps must be positive");

    std::vector<double> out(static_cast<size_t>(n * d));
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(n * d));
    auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double* row = x->data.data() + i * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*invstd)[static_cast<size_t>(i)] = is;
        for (int64_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mu) * is;
            (*xhat)[static_cast<size_t>(i * d + j)] = xh;
            out[static_cast<size_t>(i * d + j)] = xh * gamma->data[static_cast<size_t>(j)] + beta->data[static_cast<size_t>(j)];
        }
    }
    return make_result(x->shape, std::move(out), "layer_norm", {x, gamma, beta},
                       [x, gamma, beta, xhat, invstd, n, d](std::weak_ptr<Tensor> wout) {
        return [x, gamma, beta, xhat, invstd, n, d, wout]() {
            auto out = wout.lock();
            if (!out) return;
            const double* G = out->grad.data();
            if (beta->requires_grad) {
                std::vector<double> gb(static_cast<size_t>(d), 0.0);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += G[i * d + j];
                beta->accumulate_grad(gb.data(), d);
            }
            if (gamma->requires_grad) {
                std::vector<double> gg(static_cast<size_t>(d), 0.0);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        gg[static_cast<size_t>(j)] += G[i * d + j] * (*xhat)[static_cast<size_t>(i * d + j)];
                gamma->accumulate_grad(gg.data(), d);
            }
            if (x->requires_grad) {
                // dx = invstd/d * (d*dxhat - sum(dxhat) - xhat * sum(dxhat .* xhat))
                std::vector<double> gx(static_cast<size_t>(n * d));
                for (int64_t i = 0; i < n; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double dxh = G[i * d + j] * gamma->data[static_cast<size_t>(j)];
                        s1 += dxh;
                        s2 += dxh * (*xhat)[static_cast<size_t>(i * d + j)];
                    }
                    const double is = (*invstd)[static_cast<size_t>(i)];
                    for (int64_t j = 0; j < d; ++j) {
                        const double dxh = G[i * d + j] * gamma->data[static_cast<size_t>(j)];
                        const double xh = (*xhat)[static_cast<size_t>(i * d + j)];
                        gx[static_cast<size_t>(i * d + j)] =
                            is / static_cast<double>(d) * (static_cast<double>(d) * dxh - s1 - xh * s2);
                    }
                }
                x->accumulate_grad(gx.data(), x->size());
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Spatial
// ---------------------------------------------------------------------------

TensorPtr pointwise_conv(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    require(x->rank() == 3, "pointwise_conv: input must be [C,H,W], got " + shape_str(x->shape));
    const int64_t ci = x->shape[0], h = x->shape[1], ww = x->shape[2];
    require(w->rank() == 2 && w->shape[1] == ci,
            "pointwise_conv: weight " + shape_str(w->shape) + " does not accept " +
                std::to_string(ci) + " input channels");
    const int64_t co = w->shape[0];
    require(b->rank() == 1 && b->shape[0] == co,
            "pointwise_conv: bias " + shape_str(b->shape) + " does not match " + std::to_string(co) +
                " output channels");
    const int64_t hw = h * ww;
    count_macs(co * ci * hw);

    std::vector<double> d(static_cast<size_t>(co * hw));
    for (int64_t o = 0; o < co; ++o) {
        double* orow = d.data() + o * hw;
        std::fill_n(orow, hw, b->data[static_cast<size_t>(o)]);
        for (int64_t c = 0; c < ci; ++c) {
            const double wv = w->data[static_cast<size_t>(o * ci + c)];
            const double* xrow = x->data.data() + c * hw;
            for (int64_t p = 0; p < hw; ++p) orow[p] += wv * xrow[p];
        }
    }
    return make_result({co, h, ww}, std::move(d), "pointwise_conv", {x, w, b},
                       [x, w, b, ci, co, hw](std::weak_ptr<Tensor> wout) {
        return [x, w, b, ci, co, hw, wout]() {
            auto out = wout.lock();
            if (!out) return;
            const double* G = out->grad.data();
            if (x->requires_grad) {
                std::vector<double> gx(static_cast<size_t>(ci * hw), 0.0);
                for (int64_t o = 0; o < co; ++o) {
                    const double* grow = G + o * hw;
                    for (int64_t c = 0; c < ci; ++c) {
                        const double wv = w->data[static_cast<size_t>(o * ci + c)];
                        double* gxr = gx.data() + c * hw;
                        for (int64_t p = 0; p < hw; ++p) gxr[p] += wv * grow[p];
                    }
                }
                x->accumulate_grad(gx.data(), x->size());
            }
            if (w->requires_grad) {
                std::vector<double> gw(static_cast<size_t>(co * ci), 0.0);
                for (int64_t o = 0; o < co; ++o) {
                    const double* grow = G + o * hw;
                    for (int64_t c = 0; c < ci; ++c) {
                        const double* xrow = x->data.data() + c * hw;
                        double s = 0.0;
                        for (int64_t p = 0; p < hw; ++p) s += grow[p] * xrow[p];
                        gw[static_cast<size_t>(o * ci + c)] += s;
                    }
                }
                w->accumulate_grad(gw.data(), co * ci);
            }
            if (b->requires_grad) {
                std::vector<double> gb(static_cast<size_t>(co), 0.0);
                for (int64_t o = 0; o < co; ++o) {
                    const double* grow = G + o * hw;
                    for (int64_t p = 0; p < hw; ++p) gb[static_cast<size_t>(o)] += grow[p];
                }
                b->accumulate_grad(gb.data(), co);
            }
        };
    });
}

TensorPtr global_avg_pool(const TensorPtr& x) {
    require(x->rank() == 3, "global_avg_pool: input must be [C,H,W], got " + shape_str(x->shape));
    const int64_t c = x->shape[0], hw = x->shape[1] * x->shape[2];
    std::vector<double> d(static_cast<size_t>(c), 0.0);
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* row = x->data.data() + ch * hw;
        double s = 0.0;
        for (int64_t p = 0; p < hw; ++p) s += row[p];
        d[static_cast<size_t>(ch)] = s / static_cast<double>(hw);
    }
    return make_result({c, 1, 1}, std::move(d), "global_avg_pool", {x},
                       [x, c, hw](std::weak_ptr<Tensor> wout) {
        return [x, c, hw, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            const double inv = 1.0 / static_cast<double>(hw);
            std::vector<double> g(static_cast<size_t>(c * hw));
            for (int64_t ch = 0; ch < c; ++ch)
                std::fill_n(g.data() + ch * hw, hw, out->grad[static_cast<size_t>(ch)] * inv);
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr adaptive_avg_pool(const TensorPtr& x, int64_t out_h, int64_t out_w) {
    require(x->rank() == 3, "adaptive_avg_pool: input must be [C,H,W], got " + shape_str(x->shape));
    const int64_t c = x->shape[0], h = x->shape[1], w = x->shape[2];
    if (out_h > h || out_w > w)
        throw ShapeError("adaptive_avg_pool: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " exceeds source " + std::to_string(h) + "x" + std::to_string(w) +
                         " (upsampling is not this operation)");
    require(out_h >= 1 && out_w >= 1, "adaptive_avg_pool: target extents must be positive");

    auto lo = [](int64_t i, int64_t n, int64_t m) { return (i * n) / m; };
    auto hi = [](int64_t i, int64_t n, int64_t m) { return ((i + 1) * n + m - 1) / m; };

    std::vector<double> d(static_cast<size_t>(c * out_h * out_w), 0.0);
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t i = 0; i < out_h; ++i) {
            const int64_t r0 = lo(i, h, out_h), r1 = hi(i, h, out_h);
            for (int64_t j = 0; j < out_w; ++j) {
                const int64_t c0 = lo(j, w, out_w), c1 = hi(j, w, out_w);
                double s = 0.0;
                for (int64_t r = r0; r < r1; ++r)
                    for (int64_t cc = c0; cc < c1; ++cc) s += x->data[static_cast<size_t>((ch * h + r) * w + cc)];
                d[static_cast<size_t>((ch * out_h + i) * out_w + j)] =
                    s / static_cast<double>((r1 - r0) * (c1 - c0));
            }
        }
    }
    return make_result({c, out_h, out_w}, std::move(d), "adaptive_avg_pool", {x},
                       [x, c, h, w, out_h, out_w, lo, hi](std::weak_ptr<Tensor> wout) {
        return [x, c, h, w, out_h, out_w, lo, hi, wout]() {
            auto out = wout.lock();
            if (!out || !x->requires_grad) return;
            std::vector<double> g(static_cast<size_t>(x->size()), 0.0);
            for (int64_t ch = 0; ch < c; ++ch) {
                for (int64_t i = 0; i < out_h; ++i) {
                    const int64_t r0 = lo(i, h, out_h), r1 = hi(i, h, out_h);
                    for (int64_t j = 0; j < out_w; ++j) {
                        const int64_t c0 = lo(j, w, out_w), c1 = hi(j, w, out_w);
                        const double gv = out->grad[static_cast<size_t>((ch * out_h + i) * out_w + j)] /
                                          static_cast<double>((r1 - r0) * (c1 - c0));
                        for (int64_t r = r0; r < r1; ++r)
                            for (int64_t cc = c0; cc < c1; ++cc)
                                g[static_cast<size_t>((ch * h + r) * w + cc)] += gv;
                    }
                }
            }
            x->accumulate_grad(g.data(), x->size());
        };
    });
}

TensorPtr channel_scale(const TensorPtr& x, const TensorPtr& gate) {
    require(x->rank() == 3, "channel_scale: input must be [C,H,W], got " + shape_str(x->shape));
    const int64_t c = x->shape[0], hw = x->shape[1] * x->shape[2];
    require(gate->rank() == 3 && gate->shape[0] == c && gate->shape[1] == 1 && gate->shape[2] == 1,
            "channel_scale: gate must be [" + std::to_string(c) + ",1,1], got " + shape_str(gate->shape));
    count_macs(c * hw);

    std::vector<double> d(x->data);
    for (int64_t ch = 0; ch < c; ++ch) {
        const double gv = gate->data[static_cast<size_t>(ch)];
        double* row = d.data() + ch * hw;
        for (int64_t p = 0; p < hw; ++p) row[p] *= gv;
    }
    return make_result(x->shape, std::move(d), "channel_scale", {x, gate},
                       [x, gate, c, hw](std::weak_ptr<Tensor> wout) {
        return [x, gate, c, hw, wout]() {
            auto out = wout.lock();
            if (!out) return;
            const double* G = out->grad.data();
            if (x->requires_grad) {
                std::vector<double> gx(static_cast<size_t>(c * hw));
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double gv = gate->data[static_cast<size_t>(ch)];
                    for (int64_t p = 0; p < hw; ++p) gx[static_cast<size_t>(ch * hw + p)] = gv * G[ch * hw + p];
                }
                x->accumulate_grad(gx.data(), x->size());
            }
            if (gate->requires_grad) {
                std::vector<double> gg(static_cast<size_t>(c), 0.0);
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* xrow = x->data.data() + ch * hw;
                    double s = 0.0;
                    for (int64_t p = 0; p < hw; ++p) s += xrow[p] * G[ch * hw + p];
                    gg[static_cast<size_t>(ch)] = s;
                }
                gate->accumulate_grad(gg.data(), c);
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Reverse-mode
// ---------------------------------------------------------------------------

void backward(const TensorPtr& loss) {
    if (loss->size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->shape));
    if (!loss->requires_grad) return;

    std::vector<TensorPtr> topo;
    std::unordered_set<const Tensor*> visited;
    std::function<void(const TensorPtr&)> visit = [&](const TensorPtr& t) {
        if (!visited.insert(t.get()).second) return;
        for (const auto& in : t->inputs) visit(in);
        topo.push_back(t);
    };
    visit(loss);

    const double one = 1.0;
    loss->accumulate_grad(&one, 1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

double grad_check(const TensorFn& f, const std::vector<TensorPtr>& inputs, double eps) {
    if (eps <= 0.0) throw UsageError("grad_check: eps must be positive");

    std::vector<bool> saved_rg;
    saved_rg.reserve(inputs.size());
    for (const auto& in : inputs) {
        saved_rg.push_back(in->requires_grad);
        in->requires_grad = true;
        in->grad.clear();
    }

    auto loss = f(inputs);
    if (loss->size() != 1) throw ShapeError("grad_check: f must be scalar-valued");
    if (!all_finite(*loss)) throw NumericError("grad_check: non-finite loss at probe point");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    for (const auto& in : inputs) {
        if (in->grad.empty())
            analytic.emplace_back(static_cast<size_t>(in->size()), 0.0);
        else
            analytic.push_back(in->grad);
    }
    loss.reset();

    // Numeric passes run tape-free.
    for (const auto& in : inputs) in->requires_grad = false;

    double max_err = 0.0;
    for (size_t t = 0; t < inputs.size(); ++t) {
        auto& x = inputs[t]->data;
        for (size_t i = 0; i < x.size(); ++i) {
            const double old = x[i];
            x[i] = old + eps;
            const double fp = f(inputs)->item();
            x[i] = old - eps;
            const double fm = f(inputs)->item();
            x[i] = old;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: non-finite evaluation during finite differencing");
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[t][i];
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }

    for (size_t t = 0; t < inputs.size(); ++t) {
        inputs[t]->requires_grad = saved_rg[t];
        inputs[t]->grad.clear();
    }
    return max_err;
}

}  // namespace msscanet
