// Dense f64 tensors with reverse-mode gradients on an explicit tape.
//
// Tensors are immutable once produced by an op; shapes are row-major. Ops
// record a VJP closure on the active GradTape when any input is connected to
// a parameter, and GradTape::backward replays the closures in reverse
// (construction order is topological by definition).
#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "moma/common.hpp"

namespace moma {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first accumulation
    bool requires_grad = false;
    bool tape_output = false;  // produced by a recorded op

    explicit TensorData(Shape s) : shape(std::move(s)) {
        value.assign(shape_numel(shape), 0.0);
        memory::on_alloc(value.size() * sizeof(double));
    }
    TensorData(const TensorData&) = delete;
    TensorData& operator=(const TensorData&) = delete;
    ~TensorData() { memory::on_free((value.size() + grad.size()) * sizeof(double)); }

    void ensure_grad() {
        if (grad.empty() && !value.empty()) {
            grad.assign(value.size(), 0.0);
            memory::on_alloc(grad.size() * sizeof(double));
        }
    }
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape s) { return Tensor(std::make_shared<TensorData>(std::move(s))); }

    static Tensor full(Shape s, double v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.d_->value.begin(), t.d_->value.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return full({1}, v); }

    static Tensor from(Shape s, std::vector<double> data) {
        if (shape_numel(s) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(s));
        Tensor t(std::make_shared<TensorData>(std::move(s)));
        t.d_->value = std::move(data);
        return t;
    }

    static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
        Tensor t = zeros(std::move(s));
        for (double& v : t.d_->value) v = rng.normal() * stddev;
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    size_t rank() const { return d_->shape.size(); }
    size_t size() const { return d_->value.size(); }
    size_t dim(size_t i) const { return d_->shape[i]; }
    size_t rows() const { return d_->shape[0]; }
    size_t cols() const { return d_->shape[1]; }

    const double* ptr() const { return d_->value.data(); }
    double* mut() { return d_->value.data(); }
    std::span<const double> values() const { return d_->value; }
    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return d_->value[0];
    }
    double at(size_t i) const { return d_->value[i]; }
    double at(size_t i, size_t j) const { return d_->value[i * cols() + j]; }

    bool requires_grad() const { return d_ && d_->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        d_->requires_grad = b;
        return *this;
    }
    // Connected tensors participate in gradient flow.
    bool connected() const { return d_ && (d_->requires_grad || d_->tape_output); }

    bool has_grad() const { return d_ && !d_->grad.empty(); }
    std::span<const double> grad() const { return d_->grad; }
    // Tensors are shared handles; gradient accumulation mutates the shared
    // storage, not the handle, so these are const-qualified.
    double* grad_mut() const {
        d_->ensure_grad();
        return d_->grad.data();
    }
    void zero_grad() const { std::fill(d_->grad.begin(), d_->grad.end(), 0.0); }

    Tensor clone() const {
        Tensor t = zeros(shape());
        t.d_->value = d_->value;
        return t;
    }

    bool same_storage(const Tensor& o) const { return d_ == o.d_; }
    TensorData* data_ptr() const { return d_.get(); }

  private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;

    friend class GradTape;
};

// ---------------------------------------------------------------------------
// GradTape: ordered VJP closures. Single writer; backward walks once, in
// reverse, so two backward passes over the same tape are bit-identical.

class GradTape {
  public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape*& active() {
        thread_local GradTape* tape = nullptr;
        return tape;
    }

    void record(Tensor output, std::function<void()> vjp) {
        output.d_->tape_output = true;
        nodes_.push_back(std::move(vjp));
    }

    size_t node_count() const { return nodes_.size(); }

    void backward(Tensor loss) {
        if (loss.size() != 1)
            throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        if (!loss.connected())
            throw ContractError("backward: loss is not connected to this tape");
        loss.grad_mut()[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() { nodes_.clear(); }

  private:
    std::vector<std::function<void()>> nodes_;
};

inline void backward(GradTape& tape, Tensor loss) { tape.backward(std::move(loss)); }

// Installs a tape as the active recording target for the current scope.
struct TapeScope {
    GradTape tape;
    GradTape* prev;
    TapeScope() : prev(GradTape::active()) { GradTape::active() = &tape; }
    ~TapeScope() { GradTape::active() = prev; }
};

// Suspends recording (evaluation / teacher passes).
struct NoGradScope {
    GradTape* prev;
    NoGradScope() : prev(GradTape::active()) { GradTape::active() = nullptr; }
    ~NoGradScope() { GradTape::active() = prev; }
};

namespace detail {

inline GradTape* tape_for(std::initializer_list<const Tensor*> inputs) {
    GradTape* t = GradTape::active();
    if (!t) return nullptr;
    for (const Tensor* in : inputs)
        if (in->connected()) return t;
    return nullptr;
}

// Output grad may be absent when the output never fed the loss.
inline const double* out_grad(const Tensor& out) {
    return out.has_grad() ? out.grad().data() : nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = out.size();
    for (size_t i = 0; i < n; ++i) out.mut()[i] = a.at(i) + b.at(i);
    if (GradTape* t = detail::tape_for({&a, &b})) {
        t->record(out, [a, b, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const size_t m = out.size();
            if (a.connected()) {
                double* ga = a.grad_mut();
                for (size_t i = 0; i < m; ++i) ga[i] += g[i];
            }
            if (b.connected()) {
                double* gb = b.grad_mut();
                for (size_t i = 0; i < m; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.mut()[i] = a.at(i) - b.at(i);
    if (GradTape* t = detail::tape_for({&a, &b})) {
        t->record(out, [a, b, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const size_t m = out.size();
            if (a.connected()) {
                double* ga = a.grad_mut();
                for (size_t i = 0; i < m; ++i) ga[i] += g[i];
            }
            if (b.connected()) {
                double* gb = b.grad_mut();
                for (size_t i = 0; i < m; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.mut()[i] = a.at(i) * b.at(i);
    if (GradTape* t = detail::tape_for({&a, &b})) {
        t->record(out, [a, b, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const size_t m = out.size();
            if (a.connected()) {
                double* ga = a.grad_mut();
                for (size_t i = 0; i < m; ++i) ga[i] += g[i] * b.at(i);
            }
            if (b.connected()) {
                double* gb = b.grad_mut();
                for (size_t i = 0; i < m; ++i) gb[i] += g[i] * a.at(i);
            }
        });
    }
    return out;
}

// Elementwise max; ties route the gradient to `a`.
inline Tensor max_elem(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max");
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.mut()[i] = std::max(a.at(i), b.at(i));
    if (GradTape* t = detail::tape_for({&a, &b})) {
        t->record(out, [a, b, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const size_t m = out.size();
            if (a.connected()) {
                double* ga = a.grad_mut();
                for (size_t i = 0; i < m; ++i)
                    if (a.at(i) >= b.at(i)) ga[i] += g[i];
            }
            if (b.connected()) {
                double* gb = b.grad_mut();
                for (size_t i = 0; i < m; ++i)
                    if (b.at(i) > a.at(i)) gb[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.mut()[i] = a.at(i) * c;
    if (GradTape* t = detail::tape_for({&a})) {
        t->record(out, [a, out, c]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !a.connected()) return;
            double* ga = a.grad_mut();
            for (size_t i = 0; i < out.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

inline Tensor add_const(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.mut()[i] = a.at(i) + c;
    if (GradTape* t = detail::tape_for({&a})) {
        t->record(out, [a, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !a.connected()) return;
            double* ga = a.grad_mut();
            for (size_t i = 0; i < out.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

// Broadcast multiply / add of a scalar tensor (RawAdaN's pooled scalars).
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw DimensionError("scale_by: scale must be scalar, got " + shape_str(s.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const double c = s.at(0);
    for (size_t i = 0; i < out.size(); ++i) out.mut()[i] = a.at(i) * c;
    if (GradTape* t = detail::tape_for({&a, &s})) {
        t->record(out, [a, s, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            if (a.connected()) {
                double* ga = a.grad_mut();
                const double c = s.at(0);
                for (size_t i = 0; i < out.size(); ++i) ga[i] += g[i] * c;
            }
            if (s.connected()) {
                double acc = 0.0;
                for (size_t i = 0; i < out.size(); ++i) acc += g[i] * a.at(i);
                s.grad_mut()[0] += acc;
            }
        });
    }
    return out;
}

inline Tensor add_scalar_tensor(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw DimensionError("add_scalar_tensor: bias must be scalar, got " + shape_str(s.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const double c = s.at(0);
    for (size_t i = 0; i < out.size(); ++i) out.mut()[i] = a.at(i) + c;
    if (GradTape* t = detail::tape_for({&a, &s})) {
        t->record(out, [a, s, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            if (a.connected()) {
                double* ga = a.grad_mut();
                for (size_t i = 0; i < out.size(); ++i) ga[i] += g[i];
            }
            if (s.connected()) {
                double acc = 0.0;
                for (size_t i = 0; i < out.size(); ++i) acc += g[i];
                s.grad_mut()[0] += acc;
            }
        });
    }
    return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Unary maps

namespace detail {

template <typename Fwd, typename Dfn>
Tensor unary_op(const Tensor& a, Fwd f, Dfn df) {
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out.mut()[i] = f(a.at(i));
    if (GradTape* t = tape_for({&a})) {
        t->record(out, [a, out, df]() mutable {
            const double* g = out_grad(out);
            if (!g || !a.connected()) return;
            double* ga = a.grad_mut();
            for (size_t i = 0; i < out.size(); ++i) ga[i] += g[i] * df(a.at(i), out.at(i));
        });
    }
    return out;
}

inline double sigmoid_scalar(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus_scalar(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

}  // namespace detail

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return detail::sigmoid_scalar(x); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor silu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x * detail::sigmoid_scalar(x); },
        [](double x, double) {
            const double s = detail::sigmoid_scalar(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

inline Tensor gelu(const Tensor& a) {
    // Exact erf form; matches its own derivative in the FD checks.
    return detail::unary_op(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
            const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
            return cdf + x * pdf;
        });
}

inline Tensor softplus(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return detail::softplus_scalar(x); },
        [](double x, double) { return detail::sigmoid_scalar(x); });
}

// ---------------------------------------------------------------------------
// Matrix ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* po = out.mut();
    for (size_t i = 0; i < m; ++i) {
        for (size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = pb + p * n;
            double* orow = po + i * n;
            for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (GradTape* t = detail::tape_for({&a, &b})) {
        t->record(out, [a, b, out, m, k, n]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            if (a.connected()) {
                double* ga = a.grad_mut();
                const double* pb2 = b.ptr();
                for (size_t i = 0; i < m; ++i)
                    for (size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* grow = g + i * n;
                        const double* brow = pb2 + p * n;
                        for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                    }
            }
            if (b.connected()) {
                double* gb = b.grad_mut();
                const double* pa2 = a.ptr();
                for (size_t i = 0; i < m; ++i) {
                    const double* grow = g + i * n;
                    for (size_t p = 0; p < k; ++p) {
                        const double av = pa2[i * k + p];
                        if (av == 0.0) continue;
                        double* gbrow = gb + p * n;
                        for (size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

// x [m,n] + row vector b [n]
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || x.cols() != b.dim(0))
        throw DimensionError("add_rowvec: shapes " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = Tensor::zeros(x.shape());
    const size_t m = x.rows(), n = x.cols();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out.mut()[i * n + j] = x.at(i, j) + b.at(j);
    if (GradTape* t = detail::tape_for({&x, &b})) {
        t->record(out, [x, b, out, m, n]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            if (x.connected()) {
                double* gx = x.grad_mut();
                for (size_t i = 0; i < m * n; ++i) gx[i] += g[i];
            }
            if (b.connected()) {
                double* gb = b.grad_mut();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
    }
    return out;
}

// Affine map x [m,in] -> x*w + b, w [in,out], b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: expected rank-2, got " + shape_str(a.shape()));
    const size_t m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros({n, m});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out.mut()[j * m + i] = a.at(i, j);
    if (GradTape* t = detail::tape_for({&a})) {
        t->record(out, [a, out, m, n]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !a.connected()) return;
            double* ga = a.grad_mut();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
    }
    return out;
}

inline Tensor reshape(const Tensor& a, Shape s) {
    if (shape_numel(s) != a.size())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    Tensor out = Tensor::zeros(std::move(s));
    std::memcpy(out.mut(), a.ptr(), a.size() * sizeof(double));
    if (GradTape* t = detail::tape_for({&a})) {
        t->record(out, [a, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !a.connected()) return;
            double* ga = a.grad_mut();
            for (size_t i = 0; i < out.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Row / column indexing

// Rows of x reordered by idx (out[i] = x[idx[i]]). A permutation idx gives a
// bijective reindexing; backward scatters into the source rows.
inline Tensor gather_rows(const Tensor& x, const std::vector<size_t>& idx) {
    if (x.rank() != 2) throw DimensionError("gather_rows: expected rank-2, got " + shape_str(x.shape()));
    const size_t n = x.cols();
    Tensor out = Tensor::zeros({idx.size(), n});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.rows()) throw DimensionError("gather_rows: index out of range");
        std::memcpy(out.mut() + i * n, x.ptr() + idx[i] * n, n * sizeof(double));
    }
    if (GradTape* t = detail::tape_for({&x})) {
        t->record(out, [x, out, idx, n]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !x.connected()) return;
            double* gx = x.grad_mut();
            for (size_t i = 0; i < idx.size(); ++i)
                for (size_t j = 0; j < n; ++j) gx[idx[i] * n + j] += g[i * n + j];
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& x, size_t start, size_t count) {
    if (x.rank() != 2 || start + count > x.rows())
        throw DimensionError("slice_rows: range [" + std::to_string(start) + "," +
                             std::to_string(start + count) + ") outside " + shape_str(x.shape()));
    const size_t n = x.cols();
    Tensor out = Tensor::zeros({count, n});
    std::memcpy(out.mut(), x.ptr() + start * n, count * n * sizeof(double));
    if (GradTape* t = detail::tape_for({&x})) {
        t->record(out, [x, out, start, count, n]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !x.connected()) return;
            double* gx = x.grad_mut();
            for (size_t i = 0; i < count * n; ++i) gx[start * n + i] += g[i];
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& x, size_t start, size_t count) {
    if (x.rank() != 2 || start + count > x.cols())
        throw DimensionError("slice_cols: range [" + std::to_string(start) + "," +
                             std::to_string(start + count) + ") outside " + shape_str(x.shape()));
    const size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({m, count});
    for (size_t i = 0; i < m; ++i)
        std::memcpy(out.mut() + i * count, x.ptr() + i * n + start, count * sizeof(double));
    if (GradTape* t = detail::tape_for({&x})) {
        t->record(out, [x, out, start, count, m, n]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !x.connected()) return;
            double* gx = x.grad_mut();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < count; ++j) gx[i * n + start + j] += g[i * count + j];
        });
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: empty input");
    const size_t n = parts[0].cols();
    size_t m = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.cols() != n)
            throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
        m += p.rows();
    }
    Tensor out = Tensor::zeros({m, n});
    size_t row = 0;
    for (const Tensor& p : parts) {
        std::memcpy(out.mut() + row * n, p.ptr(), p.size() * sizeof(double));
        row += p.rows();
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.connected();
    if (GradTape* t = GradTape::active(); t && any) {
        t->record(out, [parts, out, n]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            size_t row = 0;
            for (const Tensor& p : parts) {
                if (p.connected()) {
                    double* gp = p.grad_mut();
                    for (size_t i = 0; i < p.size(); ++i) gp[i] += g[row * n + i];
                }
                row += p.rows();
            }
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: empty input");
    const size_t m = parts[0].rows();
    size_t n = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.rows() != m)
            throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
        n += p.cols();
    }
    Tensor out = Tensor::zeros({m, n});
    size_t col = 0;
    for (const Tensor& p : parts) {
        for (size_t i = 0; i < m; ++i)
            std::memcpy(out.mut() + i * n + col, p.ptr() + i * p.cols(), p.cols() * sizeof(double));
        col += p.cols();
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.connected();
    if (GradTape* t = GradTape::active(); t && any) {
        t->record(out, [parts, out, m, n]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            size_t col = 0;
            for (const Tensor& p : parts) {
                if (p.connected()) {
                    double* gp = p.grad_mut();
                    for (size_t i = 0; i < m; ++i)
                        for (size_t j = 0; j < p.cols(); ++j) gp[i * p.cols() + j] += g[i * n + col + j];
                }
                col += p.cols();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and normalization

namespace detail {

struct AxisSplit {
    size_t outer, axis, inner;
};

inline AxisSplit split_axis(const Shape& s, size_t axis) {
    if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit r{1, s[axis], 1};
    for (size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace detail

// Numerically stable softmax along `axis` (max subtraction).
inline Tensor softmax(const Tensor& x, size_t axis) {
    const auto sp = detail::split_axis(x.shape(), axis);
    Tensor out = Tensor::zeros(x.shape());
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
            const size_t base = o * sp.axis * sp.inner + in;
            double mx = x.at(base);
            for (size_t k = 1; k < sp.axis; ++k) mx = std::max(mx, x.at(base + k * sp.inner));
            double sum = 0.0;
            for (size_t k = 0; k < sp.axis; ++k) {
                const double e = std::exp(x.at(base + k * sp.inner) - mx);
                out.mut()[base + k * sp.inner] = e;
                sum += e;
            }
            for (size_t k = 0; k < sp.axis; ++k) out.mut()[base + k * sp.inner] /= sum;
        }
    if (GradTape* t = detail::tape_for({&x})) {
        t->record(out, [x, out, sp]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !x.connected()) return;
            double* gx = x.grad_mut();
            for (size_t o = 0; o < sp.outer; ++o)
                for (size_t in = 0; in < sp.inner; ++in) {
                    const size_t base = o * sp.axis * sp.inner + in;
                    double dot = 0.0;
                    for (size_t k = 0; k < sp.axis; ++k) {
                        const size_t i = base + k * sp.inner;
                        dot += g[i] * out.at(i);
                    }
                    for (size_t k = 0; k < sp.axis; ++k) {
                        const size_t i = base + k * sp.inner;
                        gx[i] += out.at(i) * (g[i] - dot);
                    }
                }
        });
    }
    return out;
}

inline Tensor softmax(const Tensor& x) { return softmax(x, x.rank() - 1); }

// Mean over one axis; the axis is dropped from the output shape.
inline Tensor mean_axis(const Tensor& x, size_t axis) {
    const auto sp = detail::split_axis(x.shape(), axis);
    Shape os;
    for (size_t i = 0; i < x.rank(); ++i)
        if (i != axis) os.push_back(x.dim(i));
    if (os.empty()) os.push_back(1);
    Tensor out = Tensor::zeros(os);
    const double inv = 1.0 / static_cast<double>(sp.axis);
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t in = 0; in < sp.inner; ++in) {
            double acc = 0.0;
            for (size_t k = 0; k < sp.axis; ++k) acc += x.at(o * sp.axis * sp.inner + k * sp.inner + in);
            out.mut()[o * sp.inner + in] = acc * inv;
        }
    if (GradTape* t = detail::tape_for({&x})) {
        t->record(out, [x, out, sp, inv]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !x.connected()) return;
            double* gx = x.grad_mut();
            for (size_t o = 0; o < sp.outer; ++o)
                for (size_t in = 0; in < sp.inner; ++in) {
                    const double gv = g[o * sp.inner + in] * inv;
                    for (size_t k = 0; k < sp.axis; ++k) gx[o * sp.axis * sp.inner + k * sp.inner + in] += gv;
                }
        });
    }
    return out;
}

inline Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) acc += x.at(i);
    out.mut()[0] = acc;
    if (GradTape* t = detail::tape_for({&x})) {
        t->record(out, [x, out]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !x.connected()) return;
            double* gx = x.grad_mut();
            for (size_t i = 0; i < x.size(); ++i) gx[i] += g[0];
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

// Normalize the last axis to zero mean / unit variance.
inline Tensor layer_norm(const Tensor& x, double eps = 1e-5) {
    if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
    const size_t n = x.dim(x.rank() - 1);
    const size_t rows = x.size() / n;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> inv_std(rows);
    for (size_t r = 0; r < rows; ++r) {
        const double* px = x.ptr() + r * n;
        double mean = 0.0;
        for (size_t j = 0; j < n; ++j) mean += px[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) var += (px[j] - mean) * (px[j] - mean);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (size_t j = 0; j < n; ++j) out.mut()[r * n + j] = (px[j] - mean) * is;
    }
    if (GradTape* t = detail::tape_for({&x})) {
        t->record(out, [x, out, inv_std, rows, n]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !x.connected()) return;
            double* gx = x.grad_mut();
            for (size_t r = 0; r < rows; ++r) {
                const double* grow = g + r * n;
                const double* yrow = out.ptr() + r * n;
                double gmean = 0.0, gydot = 0.0;
                for (size_t j = 0; j < n; ++j) {
                    gmean += grow[j];
                    gydot += grow[j] * yrow[j];
                }
                gmean /= static_cast<double>(n);
                gydot /= static_cast<double>(n);
                for (size_t j = 0; j < n; ++j)
                    gx[r * n + j] += inv_std[r] * (grow[j] - gmean - yrow[j] * gydot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses

// logits: [K] or [1,K]; stable log-sum-exp cross entropy.
inline Tensor cross_entropy_logits(const Tensor& logits, size_t label) {
    const size_t k = logits.size();
    if (label >= k) throw DataError("label " + std::to_string(label) + " out of range for " +
                                    std::to_string(k) + " classes");
    double mx = logits.at(0);
    for (size_t i = 1; i < k; ++i) mx = std::max(mx, logits.at(i));
    double lse = 0.0;
    for (size_t i = 0; i < k; ++i) lse += std::exp(logits.at(i) - mx);
    lse = std::log(lse) + mx;
    Tensor out = Tensor::scalar(lse - logits.at(label));
    if (GradTape* t = detail::tape_for({&logits})) {
        t->record(out, [logits, out, label, lse, k]() mutable {
            const double* g = detail::out_grad(out);
            if (!g || !logits.connected()) return;
            double* gl = logits.grad_mut();
            for (size_t i = 0; i < k; ++i) {
                double p = std::exp(logits.at(i) - lse);
                gl[i] += g[0] * (p - (i == label ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

inline Tensor mse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a.at(i) - b.at(i);
        acc += d * d;
    }
    const double inv = 1.0 / static_cast<double>(a.size());
    Tensor out = Tensor::scalar(acc * inv);
    if (GradTape* t = detail::tape_for({&a, &b})) {
        t->record(out, [a, b, out, inv]() mutable {
            const double* g = detail::out_grad(out);
            if (!g) return;
            const double c = 2.0 * inv * g[0];
            if (a.connected()) {
                double* ga = a.grad_mut();
                for (size_t i = 0; i < a.size(); ++i) ga[i] += c * (a.at(i) - b.at(i));
            }
            if (b.connected()) {
                double* gb = b.grad_mut();
                for (size_t i = 0; i < a.size(); ++i) gb[i] -= c * (a.at(i) - b.at(i));
            }
        });
    }
    return out;
}

inline bool all_finite(const Tensor& t) {
    for (size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t.at(i))) return false;
    return true;
}

}  // namespace moma
