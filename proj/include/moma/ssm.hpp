// Selective state-space forwarding layer.
//
// A Mamba-style block scanned over multiple token orders (spatial raster and
// temporal-major, each forward and backward). The output projection width is
// doubled and split channelwise into the two modulation sequences.
//
// Recurrence, zero-order-hold on A with the simplified input discretization:
//   h_t = exp(dt_t * A) (.) h_{t-1} + dt_t * B_t * u_t
//   y_t = <C_t, h_t> + D (.) u_t
// A = -exp(A_log) is strictly negative, so |exp(dt*A)| < 1 and bounded inputs
// give bounded states.
#pragma once

#include <string>
#include <vector>

#include "moma/io.hpp"
#include "moma/video.hpp"

namespace moma {

enum class Activation { Gelu, Silu };

inline Tensor apply_activation(const Tensor& x, Activation a) {
    return a == Activation::Gelu ? gelu(x) : silu(x);
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "gelu") return Activation::Gelu;
    if (s == "silu") return Activation::Silu;
    throw ConfigError("unknown activation '" + s + "', expected gelu | silu");
}

inline std::string to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "silu"; }

// ---------------------------------------------------------------------------
// Scan directions

enum class ScanAxis { SpatialRaster, TemporalMajor };
enum class ScanOrientation { Forward, Backward };

struct ScanDirection {
    ScanAxis axis = ScanAxis::SpatialRaster;
    ScanOrientation orientation = ScanOrientation::Forward;
    bool operator==(const ScanDirection&) const = default;
};

using ScanPlan = std::vector<ScanDirection>;

inline ScanPlan default_scan_plan() {
    return {{ScanAxis::SpatialRaster, ScanOrientation::Forward},
            {ScanAxis::SpatialRaster, ScanOrientation::Backward},
            {ScanAxis::TemporalMajor, ScanOrientation::Forward},
            {ScanAxis::TemporalMajor, ScanOrientation::Backward}};
}

inline std::string to_string(const ScanDirection& d) {
    std::string s = d.axis == ScanAxis::SpatialRaster ? "spatial-raster" : "temporal-major";
    s += d.orientation == ScanOrientation::Forward ? ":forward" : ":backward";
    return s;
}

inline ScanDirection scan_direction_from_string(const std::string& s) {
    size_t colon = s.find(':');
    if (colon == std::string::npos)
        throw ConfigError("bad scan direction '" + s + "', expected axis:orientation");
    std::string axis = s.substr(0, colon);
    std::string ori = s.substr(colon + 1);
    ScanDirection d;
    if (axis == "spatial-raster")
        d.axis = ScanAxis::SpatialRaster;
    else if (axis == "temporal-major")
        d.axis = ScanAxis::TemporalMajor;
    else
        throw ConfigError("unknown scan axis '" + axis + "', expected spatial-raster | temporal-major");
    if (ori == "forward")
        d.orientation = ScanOrientation::Forward;
    else if (ori == "backward")
        d.orientation = ScanOrientation::Backward;
    else
        throw ConfigError("unknown scan orientation '" + ori + "', expected forward | backward");
    return d;
}

// Bijective token order for one direction. Spatial raster is (t,h,w), the
// storage order; temporal-major is (h,w,t); backward reverses the order.
inline std::vector<size_t> scan_permutation(const ScanDirection& d, const Grid& g) {
    std::vector<size_t> perm;
    perm.reserve(g.tokens());
    if (d.axis == ScanAxis::SpatialRaster) {
        for (size_t i = 0; i < g.tokens(); ++i) perm.push_back(i);
    } else {
        for (size_t h = 0; h < g.h; ++h)
            for (size_t w = 0; w < g.w; ++w)
                for (size_t t = 0; t < g.t; ++t) perm.push_back(g.flat_index(t, h, w));
    }
    if (d.orientation == ScanOrientation::Backward) std::reverse(perm.begin(), perm.end());
    return perm;
}

inline Tensor reindex(const Tensor& x, const ScanDirection& d, const Grid& g) {
    if (x.rows() != g.tokens())
        throw DimensionError("reindex: " + std::to_string(x.rows()) + " rows vs grid tokens " +
                             std::to_string(g.tokens()));
    return gather_rows(x, scan_permutation(d, g));
}

inline Tensor inverse_reindex(const Tensor& x, const ScanDirection& d, const Grid& g) {
    if (x.rows() != g.tokens())
        throw DimensionError("inverse_reindex: " + std::to_string(x.rows()) + " rows vs grid tokens " +
                             std::to_string(g.tokens()));
    return gather_rows(x, invert_permutation(scan_permutation(d, g)));
}

// ---------------------------------------------------------------------------
// Depthwise causal 1-D convolution, kernel width K, zero left padding.

inline Tensor conv1d_depthwise_causal(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows() || b.dim(0) != w.rows())
        throw DimensionError("conv1d: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
    const size_t len = x.rows(), e = x.cols(), k = w.cols();
    Tensor out = Tensor::zeros(x.shape());
    for (size_t t = 0; t < len; ++t)
        for (size_t j = 0; j < e; ++j) {
            double acc = b.at(j);
            for (size_t p = 0; p < k; ++p) {
                const long long src = static_cast<long long>(t) - static_cast<long long>(k - 1 - p);
                if (src >= 0) acc += w.at(j, p) * x.at(static_cast<size_t>(src), j);
            }
            out.mut()[t * e + j] = acc;
        }
    if (GradTape* tape = detail::tape_for({&x, &w, &b})) {
        tape->record(out, [x, w, b, out, len, e, k]() {
            const double* g = detail::out_grad(out);
            if (!g) return;
            for (size_t t = 0; t < len; ++t)
                for (size_t j = 0; j < e; ++j) {
                    const double gv = g[t * e + j];
                    if (gv == 0.0) continue;
                    if (b.connected()) b.grad_mut()[j] += gv;
                    for (size_t p = 0; p < k; ++p) {
                        const long long src = static_cast<long long>(t) - static_cast<long long>(k - 1 - p);
                        if (src < 0) continue;
                        if (w.connected()) w.grad_mut()[j * k + p] += x.at(static_cast<size_t>(src), j) * gv;
                        if (x.connected()) x.grad_mut()[static_cast<size_t>(src) * e + j] += w.at(j, p) * gv;
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Selective scan

namespace detail {

// Shared inner recurrence over steps [t0, t1); `h` carries state across
// chunks, `hsave` (when non-null) records the post-update state per step for
// the backward pass.
inline void scan_kernel(const double* u, const double* dt, const double* bm, const double* cm,
                        const double* a, const double* d, size_t e, size_t s, size_t t0, size_t t1,
                        double* h, double* y, double* hsave) {
    for (size_t t = t0; t < t1; ++t)
        for (size_t j = 0; j < e; ++j) {
            const double step = dt[t * e + j];
            if (!(step > 0.0))
                throw ContractError("selective scan requires dt > 0, got " + std::to_string(step) +
                                    " at step " + std::to_string(t));
            const double uv = u[t * e + j];
            const double* arow = a + j * s;
            double* hrow = h + j * s;
            const double* brow = bm + t * s;
            const double* crow = cm + t * s;
            double acc = 0.0;
            for (size_t q = 0; q < s; ++q) {
                const double hv = std::exp(step * arow[q]) * hrow[q] + step * brow[q] * uv;
                hrow[q] = hv;
                if (hsave) hsave[(t * e + j) * s + q] = hv;
                acc += crow[q] * hv;
            }
            y[t * e + j] = acc + d[j] * uv;
        }
}

inline void check_scan_shapes(const Tensor& u, const Tensor& dt, const Tensor& bm, const Tensor& cm,
                              const Tensor& a, const Tensor& d) {
    const size_t len = u.rows(), e = u.cols();
    const size_t s = a.cols();
    if (dt.shape() != u.shape())
        throw DimensionError("scan: dt " + shape_str(dt.shape()) + " vs u " + shape_str(u.shape()));
    if (bm.rank() != 2 || bm.rows() != len || cm.shape() != bm.shape())
        throw DimensionError("scan: B " + shape_str(bm.shape()) + " C " + shape_str(cm.shape()) +
                             " for L=" + std::to_string(len));
    if (a.rank() != 2 || a.rows() != e || bm.cols() != s)
        throw DimensionError("scan: A " + shape_str(a.shape()) + " inconsistent with E=" +
                             std::to_string(e) + " S=" + std::to_string(bm.cols()));
    if (d.rank() != 1 || d.dim(0) != e)
        throw DimensionError("scan: D " + shape_str(d.shape()) + " vs E=" + std::to_string(e));
}

inline Tensor selective_scan_impl(const Tensor& u, const Tensor& dt, const Tensor& bm, const Tensor& cm,
                                  const Tensor& a, const Tensor& d, size_t chunk) {
    check_scan_shapes(u, dt, bm, cm, a, d);
    const size_t len = u.rows(), e = u.cols(), s = a.cols();
    Tensor out = Tensor::zeros(u.shape());
    GradTape* tape = detail::tape_for({&u, &dt, &bm, &cm, &a, &d});

    std::vector<double> h(e * s, 0.0);
    std::shared_ptr<std::vector<double>> hsave;
    if (tape) hsave = std::make_shared<std::vector<double>>(len * e * s, 0.0);

    for (size_t t0 = 0; t0 < len; t0 += chunk)
        scan_kernel(u.ptr(), dt.ptr(), bm.ptr(), cm.ptr(), a.ptr(), d.ptr(), e, s, t0,
                    std::min(len, t0 + chunk), h.data(), out.mut(), hsave ? hsave->data() : nullptr);

    if (tape) {
        tape->record(out, [u, dt, bm, cm, a, d, out, hsave, len, e, s]() {
            const double* g = detail::out_grad(out);
            if (!g) return;
            std::vector<double> gh(e * s, 0.0);
            const double* hs = hsave->data();
            for (size_t t = len; t-- > 0;)
                for (size_t j = 0; j < e; ++j) {
                    const double step = dt.at(t, j);
                    const double uv = u.at(t, j);
                    const double gy = g[t * e + j];
                    if (d.connected()) d.grad_mut()[j] += gy * uv;
                    double gu = d.at(j) * gy;
                    double gstep = 0.0;
                    double* ghrow = gh.data() + j * s;
                    for (size_t q = 0; q < s; ++q) {
                        const double hv = hs[(t * e + j) * s + q];
                        const double hprev = t > 0 ? hs[((t - 1) * e + j) * s + q] : 0.0;
                        if (cm.connected()) cm.grad_mut()[t * s + q] += gy * hv;
                        double gcur = ghrow[q] + cm.at(t, q) * gy;
                        const double ea = std::exp(step * a.at(j, q));
                        gstep += gcur * (a.at(j, q) * ea * hprev + bm.at(t, q) * uv);
                        if (a.connected()) a.grad_mut()[j * s + q] += gcur * step * ea * hprev;
                        if (bm.connected()) bm.grad_mut()[t * s + q] += gcur * step * uv;
                        gu += gcur * step * bm.at(t, q);
                        ghrow[q] = gcur * ea;
                    }
                    if (dt.connected()) dt.grad_mut()[t * e + j] += gstep;
                    if (u.connected()) u.grad_mut()[t * e + j] += gu;
                }
        });
    }
    return out;
}

}  // namespace detail

// Sequential reference recurrence; the oracle for any optimized variant.
inline Tensor selective_scan_ref(const Tensor& u, const Tensor& dt, const Tensor& bm, const Tensor& cm,
                                 const Tensor& a, const Tensor& d) {
    return detail::selective_scan_impl(u, dt, bm, cm, a, d, u.rows() == 0 ? 1 : u.rows());
}

// Chunked variant with carried state; identical arithmetic, linear in L.
inline Tensor selective_scan_chunked(const Tensor& u, const Tensor& dt, const Tensor& bm, const Tensor& cm,
                                     const Tensor& a, const Tensor& d, size_t chunk_size) {
    if (chunk_size < 1) throw ContractError("chunk_size must be >= 1");
    return detail::selective_scan_impl(u, dt, bm, cm, a, d, chunk_size);
}

// ---------------------------------------------------------------------------
// SSM forwarding layer parameters

struct SsmDirectionParams {
    Tensor conv_w, conv_b;  // [E,4] / [E]
    Tensor dt_w, dt_b;      // [E,E] / [E], softplus-activated
    Tensor b_w, b_b;        // [E,S] / [S]
    Tensor c_w, c_b;        // [E,S] / [S]
    Tensor a_log;           // [E,S]; A = -exp(a_log)
    Tensor d_skip;          // [E]
};

struct SSMParams {
    size_t channels = 0;  // C
    size_t hidden = 0;    // E
    size_t state = 0;     // S
    Activation gate_act = Activation::Gelu;
    Tensor in_w, in_b;    // [C,2E] / [2E]: main branch + gate branch
    Tensor out_w, out_b;  // [E,2C] / [2C]: doubled, split into (y1, y2)
    std::vector<SsmDirectionParams> dirs;

    static SSMParams init(size_t channels, size_t hidden, size_t state, size_t n_directions,
                          Activation gate_act, Rng& rng) {
        SSMParams p;
        p.channels = channels;
        p.hidden = hidden;
        p.state = state;
        p.gate_act = gate_act;
        const double c_sd = 1.0 / std::sqrt(static_cast<double>(channels));
        const double e_sd = 1.0 / std::sqrt(static_cast<double>(hidden));
        p.in_w = Tensor::randn({channels, 2 * hidden}, rng, c_sd).set_requires_grad();
        p.in_b = Tensor::zeros({2 * hidden}).set_requires_grad();
        // Zero init: y1 = y2 = 0 at step 0, so modulation starts as identity
        // and the frozen backbone function is untouched.
        p.out_w = Tensor::zeros({hidden, 2 * channels}).set_requires_grad();
        p.out_b = Tensor::zeros({2 * channels}).set_requires_grad();
        for (size_t i = 0; i < n_directions; ++i) {
            SsmDirectionParams d;
            d.conv_w = Tensor::randn({hidden, 4}, rng, 0.5).set_requires_grad();
            d.conv_b = Tensor::zeros({hidden}).set_requires_grad();
            d.dt_w = Tensor::randn({hidden, hidden}, rng, e_sd).set_requires_grad();
            d.dt_b = Tensor::zeros({hidden}).set_requires_grad();
            for (size_t j = 0; j < hidden; ++j) {
                // softplus(dt_b) log-uniform in [1e-3, 1e-1]
                const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
                d.dt_b.mut()[j] = std::log(std::expm1(dt));
            }
            d.b_w = Tensor::randn({hidden, state}, rng, e_sd).set_requires_grad();
            d.b_b = Tensor::zeros({state}).set_requires_grad();
            d.c_w = Tensor::randn({hidden, state}, rng, e_sd).set_requires_grad();
            d.c_b = Tensor::zeros({state}).set_requires_grad();
            d.a_log = Tensor::zeros({hidden, state}).set_requires_grad();
            for (size_t j = 0; j < hidden; ++j)
                for (size_t q = 0; q < state; ++q)
                    d.a_log.mut()[j * state + q] = std::log(static_cast<double>(q + 1));
            d.d_skip = Tensor::full({hidden}, 1.0).set_requires_grad();
            p.dirs.push_back(std::move(d));
        }
        return p;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out = {in_w, in_b, out_w, out_b};
        for (const auto& d : dirs)
            for (const Tensor& t : {d.conv_w, d.conv_b, d.dt_w, d.dt_b, d.b_w, d.b_b, d.c_w, d.c_b,
                                    d.a_log, d.d_skip})
                out.push_back(t);
        return out;
    }

    std::vector<NamedTensor> named(const std::string& prefix) const {
        std::vector<NamedTensor> out = {{prefix + ".in_w", "trainable", in_w},
                                        {prefix + ".in_b", "trainable", in_b},
                                        {prefix + ".out_w", "trainable", out_w},
                                        {prefix + ".out_b", "trainable", out_b}};
        for (size_t i = 0; i < dirs.size(); ++i) {
            const std::string dp = prefix + ".dir" + std::to_string(i);
            const auto& d = dirs[i];
            out.push_back({dp + ".conv_w", "trainable", d.conv_w});
            out.push_back({dp + ".conv_b", "trainable", d.conv_b});
            out.push_back({dp + ".dt_w", "trainable", d.dt_w});
            out.push_back({dp + ".dt_b", "trainable", d.dt_b});
            out.push_back({dp + ".b_w", "trainable", d.b_w});
            out.push_back({dp + ".b_b", "trainable", d.b_b});
            out.push_back({dp + ".c_w", "trainable", d.c_w});
            out.push_back({dp + ".c_b", "trainable", d.c_b});
            out.push_back({dp + ".a_log", "trainable", d.a_log});
            out.push_back({dp + ".d_skip", "trainable", d.d_skip});
        }
        return out;
    }
};

struct ModulationPair {
    Tensor scale;  // y1 [HWT, C]
    Tensor bias;   // y2 [HWT, C]
};

// Full forwarding layer: in-projection, per-direction (reindex, causal conv,
// silu, selective scan, inverse reindex) summed over directions, gated by the
// activated gate branch, then the doubled out-projection split into (y1, y2).
inline ModulationPair ssm_forward(const Tensor& x, const SSMParams& p, const ScanPlan& plan,
                                  const Grid& grid, size_t scan_chunk = 64) {
    if (x.rank() != 2 || x.rows() != grid.tokens())
        throw DimensionError("ssm_forward: tokens " + shape_str(x.shape()) + " vs grid product " +
                             std::to_string(grid.tokens()));
    if (x.cols() != p.channels)
        throw DimensionError("ssm_forward: channels " + std::to_string(x.cols()) + " vs params C=" +
                             std::to_string(p.channels));
    if (plan.empty()) throw ContractError("ssm_forward: scan plan is empty");
    if (plan.size() != p.dirs.size())
        throw DimensionError("ssm_forward: plan has " + std::to_string(plan.size()) +
                             " directions, params have " + std::to_string(p.dirs.size()));

    Tensor proj = linear(x, p.in_w, p.in_b);          // [L, 2E]
    Tensor u = slice_cols(proj, 0, p.hidden);         // main branch
    Tensor gate = slice_cols(proj, p.hidden, p.hidden);

    Tensor summed;
    for (size_t i = 0; i < plan.size(); ++i) {
        const auto& d = p.dirs[i];
        Tensor xd = reindex(u, plan[i], grid);
        Tensor act = silu(conv1d_depthwise_causal(xd, d.conv_w, d.conv_b));
        Tensor dt = softplus(linear(act, d.dt_w, d.dt_b));
        Tensor bm = linear(act, d.b_w, d.b_b);
        Tensor cm = linear(act, d.c_w, d.c_b);
        Tensor a = neg(exp(d.a_log));
        Tensor yd = selective_scan_chunked(act, dt, bm, cm, a, d.d_skip, scan_chunk);
        Tensor back = inverse_reindex(yd, plan[i], grid);
        summed = summed.defined() ? add(summed, back) : back;
    }

    Tensor gated = mul(summed, apply_activation(gate, p.gate_act));
    Tensor out = linear(gated, p.out_w, p.out_b);  // [L, 2C]
    return {slice_cols(out, 0, p.channels), slice_cols(out, p.channels, p.channels)};
}

}  // namespace moma
