// Scaling benchmarks: wall-clock and tensor-byte high-water mark of one
// layer forward as the frame count grows, for full spatial-temporal
// attention, per-frame attention and the windowed Divide+Modulate layer.
#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "moma/attention.hpp"
#include "moma/fusion.hpp"
#include "moma/ssm.hpp"

namespace moma {

enum class BenchMethod { FullAttention, PerFrameAttention, DivideModulate };

inline std::string to_string(BenchMethod m) {
    switch (m) {
        case BenchMethod::FullAttention: return "full-attn";
        case BenchMethod::PerFrameAttention: return "per-frame-attn";
        case BenchMethod::DivideModulate: return "divide+modulate";
    }
    return "?";
}

inline BenchMethod bench_method_from_string(const std::string& s) {
    if (s == "full" || s == "full-attn") return BenchMethod::FullAttention;
    if (s == "frame" || s == "per-frame-attn") return BenchMethod::PerFrameAttention;
    if (s == "divide" || s == "divide+modulate") return BenchMethod::DivideModulate;
    throw ConfigError("unknown bench method '" + s + "', expected full | frame | divide");
}

struct BenchConfig {
    size_t grid_h = 8, grid_w = 8;
    size_t channels = 32, heads = 4;
    WindowSpec window = WindowSpec::square(4);
    size_t ssm_state = 8;
    size_t repeats = 3;
    size_t mem_limit_bytes = 0;  // 0 = unlimited
    uint64_t seed = 11;
};

struct BenchRow {
    std::string method;
    size_t frames = 0;
    unsigned long long flops = 0;  // closed-form attention MACs (count_flops)
    double seconds = 0.0;          // median over repeats; 0 when oom
    size_t bytes_hwm = 0;
    bool oom = false;
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace detail

// One layer forward for the given method. Benchmarks run without a tape.
inline Tensor bench_layer_forward(BenchMethod method, const VideoTensor& v, const AttentionWeights& aw,
                                  const FfnWeights& fw, const SSMParams& sp, const ScanPlan& plan,
                                  const WindowSpec& window) {
    switch (method) {
        case BenchMethod::FullAttention:
            return ffn(divide(v, WindowSpec::full_video(), aw).tokens, fw);
        case BenchMethod::PerFrameAttention:
            return ffn(divide(v, WindowSpec::full_frame(), aw).tokens, fw);
        case BenchMethod::DivideModulate: {
            VideoTensor d = divide(v, window, aw);
            ModulationPair m = ssm_forward(d.tokens, sp, plan, v.grid);
            return ffn(seqmod(d.tokens, m), fw);
        }
    }
    throw ConfigError("unhandled bench method");
}

inline unsigned long long bench_flops(BenchMethod method, size_t h, size_t w, size_t t, size_t c,
                                      const WindowSpec& window) {
    switch (method) {
        case BenchMethod::FullAttention: return count_flops(h, w, t, c, AttentionRegime::Full).total();
        case BenchMethod::PerFrameAttention:
            return count_flops(h, w, t, c, AttentionRegime::PerFrame).total();
        case BenchMethod::DivideModulate:
            return count_flops(h, w, t, c, AttentionRegime::Windowed, window).total();
    }
    return 0;
}

// Rows ordered method-major then ascending T. Rows whose measured high-water
// mark exceeds mem_limit_bytes are flagged oom and carry no timing.
inline std::vector<BenchRow> bench_scaling(const std::vector<BenchMethod>& methods,
                                           const std::vector<size_t>& t_list, const BenchConfig& cfg) {
    for (size_t i = 1; i < t_list.size(); ++i)
        if (t_list[i] <= t_list[i - 1]) throw ConfigError("bench frame list must be ascending");

    NoGradScope ng;
    Rng rng(cfg.seed);
    AttentionWeights aw = AttentionWeights::init(cfg.channels, cfg.heads, rng);
    FfnWeights fw = FfnWeights::init(cfg.channels, rng);
    ScanPlan plan = default_scan_plan();
    SSMParams sp = SSMParams::init(cfg.channels, 2 * cfg.channels, cfg.ssm_state, plan.size(),
                                   Activation::Gelu, rng);

    std::vector<BenchRow> rows;
    for (BenchMethod method : methods) {
        for (size_t t : t_list) {
            Grid g{t, cfg.grid_h, cfg.grid_w};
            BenchRow row;
            row.method = to_string(method);
            row.frames = t;
            row.flops = bench_flops(method, g.h, g.w, g.t, cfg.channels, cfg.window);

            VideoTensor v = VideoTensor::wrap(g, Tensor::randn({g.tokens(), cfg.channels}, rng));

            memory::reset_peak();
            bench_layer_forward(method, v, aw, fw, sp, plan, cfg.window);
            row.bytes_hwm = memory::peak_bytes().load();
            if (cfg.mem_limit_bytes != 0 && row.bytes_hwm > cfg.mem_limit_bytes) {
                row.oom = true;
                rows.push_back(row);
                continue;
            }

            std::vector<double> times;
            for (size_t r = 0; r < cfg.repeats; ++r) {
                auto start = std::chrono::steady_clock::now();
                bench_layer_forward(method, v, aw, fw, sp, plan, cfg.window);
                auto stop = std::chrono::steady_clock::now();
                times.push_back(std::chrono::duration<double>(stop - start).count());
            }
            row.seconds = detail::median(std::move(times));
            rows.push_back(row);
        }
    }
    return rows;
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw ContractError("loglog_slope needs >= 2 points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        const double lx = std::log(xs[i]), ly = std::log(ys[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// R^2 of an ordinary linear fit y ~ a + b x.
inline double linear_fit_r2(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw ContractError("linear_fit_r2 needs >= 2 points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double a = (sy - b * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double mean = sy / n;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double fit = a + b * xs[i];
        ss_res += (ys[i] - fit) * (ys[i] - fit);
        ss_tot += (ys[i] - mean) * (ys[i] - mean);
    }
    return ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
}

// Median wall-clock of one selective scan at sequence length l; used for the
// scan-linearity check.
inline double scan_runtime_seconds(size_t l, size_t hidden, size_t state, size_t repeats, uint64_t seed) {
    NoGradScope ng;
    Rng rng(seed);
    Tensor u = Tensor::randn({l, hidden}, rng);
    Tensor dt = Tensor::zeros({l, hidden});
    for (size_t i = 0; i < dt.size(); ++i) dt.mut()[i] = rng.uniform(0.05, 0.5);
    Tensor bm = Tensor::randn({l, state}, rng);
    Tensor cm = Tensor::randn({l, state}, rng);
    Tensor a = Tensor::zeros({hidden, state});
    for (size_t i = 0; i < a.size(); ++i) a.mut()[i] = -rng.uniform(0.2, 2.0);
    Tensor d = Tensor::randn({hidden}, rng);
    std::vector<double> times;
    for (size_t r = 0; r < repeats; ++r) {
        auto start = std::chrono::steady_clock::now();
        selective_scan_chunked(u, dt, bm, cm, a, d, 64);
        auto stop = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(stop - start).count());
    }
    return detail::median(std::move(times));
}

}  // namespace moma
