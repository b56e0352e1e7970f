// rankgsl command-line tool: single trials, benchmark sweeps, plume prewarm.

#include "rankgsl/harness.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace rankgsl;

int exit_code(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::parse: return 3;
    case ErrorCategory::validation: return 4;
    case ErrorCategory::convergence: return 5;
    case ErrorCategory::unreachable: return 6;
    case ErrorCategory::domain: return 7;
    case ErrorCategory::io: return 8;
    }
    return 1;
}

/// --cache-dir wins over RANKGSL_PLUME_CACHE; "none" disables the disk cache.
std::optional<std::filesystem::path> cache_directory(const std::string& flag) {
    std::string dir = flag;
    if (dir.empty()) {
        const char* env = std::getenv("RANKGSL_PLUME_CACHE");
        dir = env && *env ? env : ".rankgsl-cache";
    }
    if (dir == "none") return std::nullopt;
    return std::filesystem::path(dir);
}

GridCoord parse_cell(const std::string& text) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw ParseError("--source: expected COL,ROW, got '" + text + "'");
    try {
        return {std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
    } catch (const std::exception&) {
        throw ParseError("--source: expected COL,ROW, got '" + text + "'");
    }
}

std::string file_safe(std::string s) {
    for (auto& c : s)
        if (c == '/' || c == '\\' || c == ' ') c = '_';
    return s;
}

struct RunArgs {
    std::string scenario, feature, sensor, out{"."}, cache_dir;
    std::optional<std::uint64_t> seed;
    bool dump{false};
};

int cmd_run(const RunArgs& a) {
    Scenario s = load_scenario(a.scenario);
    if (!a.feature.empty()) s.feature.kind = parse_feature_kind(a.feature);
    if (!a.sensor.empty()) apply_sensor_condition(s, a.sensor);
    if (a.seed) s.environment = with_seed(s.environment, *a.seed);
    s.validate();

    PlumeCache cache(s.environment, s.plume, cache_directory(a.cache_dir));
    std::ofstream dump;
    TrialObserver observer;
    if (a.dump) {
        std::error_code ec;
        std::filesystem::create_directories(a.out, ec);
        if (ec) throw IoError("cannot create '" + a.out + "': " + ec.message());
        const auto path = std::filesystem::path(a.out) / (file_safe(s.id) + "_posteriors.jsonl");
        dump.open(path, std::ios::trunc);
        if (!dump) throw IoError("cannot write '" + path.string() + "'");
        observer = [&](const IterationSnapshot& snap, const Posterior& post, std::span<const Measurement> b) {
            dump << posterior_record(s.environment, snap, post, b).dump() << '\n';
        };
    }
    const TrialResult r = run_trial(s, cache, observer);
    std::cout << trial_record(r).dump() << '\n';
    std::fprintf(stderr, "%s %s/%s: %s after %d iterations, error %.3f m (%.2f cell diagonals), %.2f s\n",
                 s.id.c_str(), r.sensor.c_str(), std::string(to_string(r.feature)).c_str(),
                 std::string(to_string(r.termination)).c_str(), r.iterations_used, r.localization_error,
                 r.localization_error / s.environment.cell_diagonal(), r.wall_seconds);
    return 0;
}

struct BenchArgs {
    std::string config, out, cache_dir;
    int workers{1};
    std::optional<std::uint64_t> seed;
    std::optional<int> replicates;
    bool dump{false};
    bool quiet{false};
};

int cmd_bench(const BenchArgs& a) {
    BenchConfig cfg = load_bench_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    if (a.replicates) cfg.replicates = *a.replicates;
    if (a.dump) cfg.dump_posteriors = true;
    PlumeCache cache(cfg.base.environment, cfg.base.plume, cache_directory(a.cache_dir));
    const auto progress = [&](std::size_t done, std::size_t total) {
        if (!a.quiet) std::fprintf(stderr, "\r%zu/%zu trials", done, total);
    };
    const BenchOutcome out = run_benchmark(cfg, cache, std::filesystem::path(a.out), a.workers, progress);
    if (!a.quiet) std::fprintf(stderr, "\n");
    const double cd = cfg.base.environment.cell_diagonal();
    std::printf("%-11s %-13s %6s %6s %9s %14s %14s %10s\n", "sensor", "feature", "trials", "failed", "converged",
                "median_err[m]", "median_err[cd]", "median_it");
    for (const auto& g : out.summary)
        std::printf("%-11s %-13s %6d %6d %9d %14.3f %14.2f %10.1f\n", g.sensor.c_str(),
                    std::string(to_string(g.feature)).c_str(), g.trials, g.failed, g.converged, g.median_error,
                    g.median_error / cd, g.median_iterations);
    std::printf("logs: %s/trials.jsonl, summary.json, timings.jsonl (%zu plume solves)\n", a.out.c_str(),
                out.plume_solves);
    return 0;
}

struct SolveArgs {
    std::string scenario, source, out, cache_dir;
};

int cmd_solve(const SolveArgs& a) {
    const Scenario s = load_scenario(a.scenario);
    const Environment& env = s.environment;
    PlumeCache cache(env, s.plume, cache_directory(a.cache_dir));
    if (a.source == "all") {
        const Posterior prior = make_prior(env, s.estimation.prior_margin_cells);
        std::size_t n = 0;
        for (std::size_t i = 0; i < prior.size(); ++i)
            if (prior.probability()[i] > 0.0) {
                cache.get(CellIndex{i});
                ++n;
            }
        std::fprintf(stderr, "prewarmed %zu candidate sources (%zu solved, %zu from disk)\n", n, cache.solves(),
                     cache.disk_loads());
        return 0;
    }
    const GridCoord g = parse_cell(a.source);
    if (!env.in_grid(g)) throw ValidationError("source", "outside grid");
    if (!env.is_free(g)) throw ValidationError("source", "lies inside an obstacle");
    const PlumeField& f = cache.get(env.index_of(g));
    if (!a.out.empty()) {
        std::ofstream out(a.out, std::ios::trunc);
        if (!out) throw IoError("cannot write '" + a.out + "'");
        out << nlohmann::json{{"width_cells", env.width_cells()},
                              {"height_cells", env.height_cells()},
                              {"cell_size", env.cell_size()},
                              {"source_cell", {g.col, g.row}},
                              {"solver_residual", f.solver_residual},
                              {"sweeps", f.sweeps},
                              {"concentration", f.concentration}}
                   .dump()
            << '\n';
    }
    std::fprintf(stderr, "source (%d,%d): max %.6g, residual %.3g after %d sweeps\n", g.col, g.row, f.max(),
                 f.solver_residual, f.sweeps);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rankgsl: gas source localization simulator and STE benchmark"};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Run one closed-loop trial and print its record");
    run_cmd->add_option("--scenario", run.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--feature", run.feature, "value|fixed_hit|adaptive_hit|rank");
    run_cmd->add_option("--sensor", run.sensor, "calibrated|sensor_I|sensor_II");
    run_cmd->add_option("--seed", run.seed, "Trial seed (overrides environment.seed)");
    run_cmd->add_flag("--dump-posteriors", run.dump, "Write per-iteration posteriors");
    run_cmd->add_option("--out", run.out, "Directory for posterior dumps")->capture_default_str();
    run_cmd->add_option("--cache-dir", run.cache_dir, "Plume cache directory, 'none' to disable");

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "Run a seeded benchmark sweep");
    bench_cmd->add_option("--config", bench.config, "Benchmark config file")->required()->check(CLI::ExistingFile);
    bench_cmd->add_option("--out", bench.out, "Output directory")->required();
    bench_cmd->add_option("--workers", bench.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    bench_cmd->add_option("--seed", bench.seed, "Top-level seed (overrides the config)");
    bench_cmd->add_option("--replicates", bench.replicates, "Trials per condition (overrides the config)")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_flag("--dump-posteriors", bench.dump, "Write per-iteration posteriors per trial");
    bench_cmd->add_flag("--quiet", bench.quiet, "No progress output");
    bench_cmd->add_option("--cache-dir", bench.cache_dir, "Plume cache directory, 'none' to disable");

    SolveArgs solve;
    auto* solve_cmd = app.add_subcommand("solve-plume", "Solve (and cache) the plume of one source cell");
    solve_cmd->add_option("--scenario", solve.scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    solve_cmd->add_option("--source", solve.source, "COL,ROW or 'all' to prewarm every candidate")->required();
    solve_cmd->add_option("--out", solve.out, "Write the field as JSON");
    solve_cmd->add_option("--cache-dir", solve.cache_dir, "Plume cache directory, 'none' to disable");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) return cmd_run(run);
        if (*bench_cmd) return cmd_bench(bench);
        if (*solve_cmd) return cmd_solve(solve);
    } catch (const Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.category())).c_str(), e.what());
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error [internal]: %s\n", e.what());
        return 1;
    }
    return 1;
}
