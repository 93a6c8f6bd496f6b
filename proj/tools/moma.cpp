// moma: train/eval/ablate/bench/gradcheck/oracle command line.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "moma/gradsuite.hpp"
#include "moma/harness.hpp"

namespace fs = std::filesystem;
using namespace moma;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

ExperimentConfig load_config_or_die(const std::string& path) {
    if (!fs::exists(path)) {
        std::cerr << "config not found: " << path << "\n";
        std::exit(kExitUsage);
    }
    return parse_experiment_config(read_file(path));
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << text;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, bool quiet) {
    ExperimentConfig cfg = load_config_or_die(config_path);
    TrainResult result = train_run(cfg, quiet ? nullptr : &std::cout);
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "metrics.csv", result.metrics_csv);
    save_checkpoint(fs::path(out_dir) / "checkpoint", *result.model, cfg);
    if (result.frozen_hash_before != result.frozen_hash_after) {
        std::cerr << "freeze contract violated: frozen parameters changed during training\n";
        return kExitFailure;
    }
    std::cout << "final val_accuracy " << result.final_val_accuracy << "\n";
    std::cout << "frozen sha256 " << result.frozen_hash_after << "\n";
    std::cout << "wrote " << out_dir << "/metrics.csv and " << out_dir << "/checkpoint\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& split) {
    if (!fs::exists(fs::path(checkpoint_dir) / "manifest.json")) {
        std::cerr << "checkpoint not found: " << checkpoint_dir << "\n";
        return kExitUsage;
    }
    auto [model, cfg] = load_checkpoint(checkpoint_dir);
    Dataset ds = gen_task(cfg.task);
    const auto& samples = split == "train" ? ds.train : ds.val;
    std::cout << split << " accuracy " << evaluate(*model, samples) << " over " << samples.size()
              << " samples\n";
    return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& axis_str, const std::string& out_csv,
               bool quiet) {
    ExperimentConfig cfg = load_config_or_die(config_path);
    AblationAxis axis = ablation_axis_from_string(axis_str);
    std::string csv = run_ablation(cfg, axis, quiet ? nullptr : &std::cout);
    if (out_csv.empty())
        std::cout << csv;
    else {
        write_file(out_csv, csv);
        std::cout << "wrote " << out_csv << "\n";
    }
    return kExitOk;
}

int cmd_bench(const std::string& methods_str, const std::string& frames_str, const std::string& out_csv,
              size_t grid, size_t channels, size_t repeats, size_t mem_limit) {
    std::vector<BenchMethod> methods;
    std::stringstream ms(methods_str);
    std::string tok;
    while (std::getline(ms, tok, ',')) methods.push_back(bench_method_from_string(tok));
    std::vector<size_t> frames;
    std::stringstream fsm(frames_str);
    while (std::getline(fsm, tok, ',')) frames.push_back(std::stoul(tok));
    if (methods.empty() || frames.empty()) {
        std::cerr << "bench needs at least one method and one frame count\n";
        return kExitUsage;
    }

    BenchConfig cfg;
    cfg.grid_h = cfg.grid_w = grid;
    cfg.channels = channels;
    cfg.repeats = repeats;
    cfg.mem_limit_bytes = mem_limit;
    std::vector<BenchRow> rows = bench_scaling(methods, frames, cfg);
    std::string csv = bench_csv(rows);
    if (out_csv.empty())
        std::cout << csv;
    else {
        write_file(out_csv, csv);
        std::cout << "wrote " << out_csv << "\n";
    }

    for (BenchMethod m : methods) {
        std::vector<double> xs, ys;
        for (const auto& r : rows)
            if (r.method == to_string(m) && !r.oom) {
                xs.push_back(static_cast<double>(r.frames));
                ys.push_back(r.seconds);
            }
        if (xs.size() >= 2)
            std::cout << to_string(m) << " log-log slope " << loglog_slope(xs, ys) << "\n";
    }
    return kExitOk;
}

int cmd_gradcheck(uint64_t seed) {
    auto results = run_gradient_suite(seed);
    bool all = true;
    for (const auto& r : results) {
        const bool ok = r.pass(1e-4);
        all = all && ok;
        std::printf("%-20s max rel err %10.3e over %4zu elems  %s\n", r.name.c_str(), r.max_rel_err,
                    r.checked, ok ? "ok" : "FAIL");
    }
    std::cout << (all ? "gradcheck: all ops pass" : "gradcheck: FAILURES") << "\n";
    return all ? kExitOk : kExitFailure;
}

int cmd_oracle(size_t cases, uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (size_t i = 0; i < cases; ++i) {
        Rng c = rng.split();
        const size_t l = 1 + c.index(64), e = 1 + c.index(8), s = 1 + c.index(8);
        Tensor u = Tensor::randn({l, e}, c);
        Tensor dt = Tensor::zeros({l, e});
        for (size_t j = 0; j < dt.size(); ++j) dt.mut()[j] = c.uniform(0.01, 1.0);
        Tensor bm = Tensor::randn({l, s}, c);
        Tensor cm = Tensor::randn({l, s}, c);
        Tensor a = Tensor::zeros({e, s});
        for (size_t j = 0; j < a.size(); ++j) a.mut()[j] = -c.uniform(0.1, 3.0);
        Tensor d = Tensor::randn({e}, c);
        Tensor ref = selective_scan_ref(u, dt, bm, cm, a, d);
        Tensor chunked = selective_scan_chunked(u, dt, bm, cm, a, d, 1 + c.index(l));
        for (size_t j = 0; j < ref.size(); ++j) {
            const double denom = std::max(1e-12, std::abs(ref.at(j)));
            worst = std::max(worst, std::abs(ref.at(j) - chunked.at(j)) / denom);
        }
    }
    std::cout << "oracle: " << cases << " cases, max rel err " << worst << "\n";
    const bool ok = worst < 1e-10;
    std::cout << (ok ? "oracle: pass" : "oracle: FAIL") << "\n";
    return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MoMa divide-and-modulate adapter harness"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs/latest", checkpoint_dir, split = "val";
    std::string axis = "fusion", out_csv;
    std::string methods = "full,frame,divide", frames = "2,4,8,16";
    size_t grid = 8, channels = 32, repeats = 3, mem_limit = 0, cases = 100;
    uint64_t seed = 7;
    bool quiet = false;

    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "experiment config path")->required();
    train->add_option("--out", out_dir, "output directory for metrics.csv and checkpoint/");
    train->add_flag("--quiet", quiet, "suppress per-epoch log lines");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on regenerated data");
    eval->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    eval->add_option("--split", split, "val | train")->check(CLI::IsMember({"val", "train"}));

    auto* ablate = app.add_subcommand("ablate", "run an ablation matrix");
    ablate->add_option("--config", config_path, "base experiment config")->required();
    ablate->add_option("--axis", axis, "fusion | window | pattern")
        ->check(CLI::IsMember({"fusion", "window", "pattern"}));
    ablate->add_option("--out", out_csv, "CSV output path (stdout when omitted)");
    ablate->add_flag("--quiet", quiet, "suppress progress lines");

    auto* bench = app.add_subcommand("bench", "scaling benchmark over frame counts");
    bench->add_option("--methods", methods, "comma list of full | frame | divide");
    bench->add_option("--frames", frames, "ascending comma list of frame counts");
    bench->add_option("--out", out_csv, "CSV output path (stdout when omitted)");
    bench->add_option("--grid", grid, "square spatial token extent");
    bench->add_option("--channels", channels, "feature width");
    bench->add_option("--repeats", repeats, "timing repeats (median reported)");
    bench->add_option("--mem-limit", mem_limit, "tensor-byte budget; rows above it are flagged oom");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op");
    gradcheck_cmd->add_option("--seed", seed, "suite seed");

    auto* oracle = app.add_subcommand("oracle", "chunked scan vs sequential reference");
    oracle->add_option("--cases", cases, "number of random cases");
    oracle->add_option("--seed", seed, "case seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, out_dir, quiet);
        if (eval->parsed()) return cmd_eval(checkpoint_dir, split);
        if (ablate->parsed()) return cmd_ablate(config_path, axis, out_csv, quiet);
        if (bench->parsed()) return cmd_bench(methods, frames, out_csv, grid, channels, repeats, mem_limit);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(seed);
        if (oracle->parsed()) return cmd_oracle(cases, seed);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
