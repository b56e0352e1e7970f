// Acceptance checks: one PASS/FAIL line per criterion.
//
//   acceptance [--work-dir DIR] [--only N[,N...]]
//
// The work directory holds the plume cache and benchmark logs; reruns reuse
// the cache.

#include "rankgsl/harness.hpp"

#include "plume_oracle.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace rankgsl;
namespace fs = std::filesystem;

namespace {

const fs::path scenario_dir = RANKGSL_SCENARIOS;

struct Outcome {
    bool pass{false};
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Context {
    fs::path work;
    std::vector<nlohmann::json> all_records; // every benchmark record produced here
    std::optional<BenchOutcome> full;
    std::unique_ptr<PlumeCache> plumes;
    std::optional<BenchConfig> full_cfg;

    const PlumeCache& cache_for(const Scenario& s) {
        if (!plumes || plumes->key_hash() != plume_key_hash(s.environment, s.plume))
            plumes = std::make_unique<PlumeCache>(s.environment, s.plume, work / "plume_cache");
        return *plumes;
    }

    const BenchOutcome& full_outcome() {
        if (!full) {
            full_cfg = load_bench_config(scenario_dir / "bench_full.json");
            full = run_benchmark(*full_cfg, cache_for(full_cfg->base), work / "full", 1);
            all_records.insert(all_records.end(), full->records.begin(), full->records.end());
        }
        return *full;
    }
};

const GroupSummary& group(const BenchOutcome& o, const std::string& sensor, FeatureKind f) {
    for (const auto& g : o.summary)
        if (g.sensor == sensor && g.feature == f) return g;
    throw std::runtime_error("missing benchmark group " + sensor + "/" + std::string(to_string(f)));
}

// ---------------------------------------------------------------------------

Outcome sensor_round_trip(Context&) {
    double worst = 0.0;
    for (const auto& p : {sensor_I(), sensor_II()})
        for (int i = 0; i < 1000; ++i) {
            const double g = std::pow(10.0, -3.0 + 7.0 * i / 999.0);
            worst = std::max(worst, std::abs(calibrate(p, concentration_to_voltage(p, g)) - g) / g);
        }
    return {worst <= 1e-9, fmt("max relative error %.2e over 2 x 1000 concentrations in [1e-3, 1e4]", worst)};
}

Outcome dynamics(Context&) {
    const SensorParams p = sensor_I();
    const int n = 1000;
    SensorState up(0, 0.0);
    for (int i = 0; i < n; ++i) step_dynamics(up, p, 1.0, p.tau_res / n);
    SensorState down(0, 1.0);
    for (int i = 0; i < n; ++i) step_dynamics(down, p, 0.0, p.tau_rec / n);
    const bool ok = std::abs(up.current_reading - 0.632) <= 0.01 && std::abs(down.current_reading - 0.368) <= 0.01;
    return {ok, fmt("rise %.4f at tau_res, decay %.4f at tau_rec", up.current_reading, down.current_reading)};
}

Outcome noise(Context&) {
    const SensorParams p = sensor_I();
    SensorState s(2024);
    double worst = 0.0;
    std::string d;
    for (double v : {0.5, 2.0, 4.0}) {
        std::vector<double> x(10000);
        double mean = 0.0;
        for (auto& e : x) mean += (e = add_noise(s, p, v));
        mean /= x.size();
        double ss = 0.0;
        for (double e : x) ss += (e - mean) * (e - mean);
        const double sd = std::sqrt(ss / (x.size() - 1));
        const double rel = std::abs(sd / noise_std(p, v) - 1.0);
        worst = std::max(worst, rel);
        d += fmt("v=%.1f: %.5f vs %.5f; ", v, sd, noise_std(p, v));
    }
    return {worst < 0.05, d + fmt("worst relative deviation %.3f", worst)};
}

Outcome edf(Context&) {
    std::mt19937_64 rng(77);
    int mismatches = 0;
    for (int t = 0; t < 200; ++t) {
        std::vector<double> d(1 + rng() % 300);
        const int levels = 1 + static_cast<int>(rng() % 40);
        for (auto& x : d) x = t % 2 ? static_cast<double>(rng() % levels) : std::normal_distribution<double>()(rng);
        SortedDataset s;
        s.insert_batch(d);
        const auto got = feature_rank(s, d);
        const auto via_extract = extract(FeatureKind::rank, d, {});
        for (std::size_t i = 0; i < d.size(); ++i) {
            std::size_t c = 0;
            for (double y : d) c += y <= d[i];
            const double want = static_cast<double>(c) / static_cast<double>(d.size());
            mismatches += got[i] != want || via_extract[i] != want;
        }
    }
    SortedDataset inc;
    std::vector<double> all;
    for (int b = 0; b < 100; ++b) {
        std::vector<double> batch(rng() % 50);
        for (auto& x : batch) x = static_cast<double>(rng() % 500);
        inc.insert_batch(batch);
        all.insert(all.end(), batch.begin(), batch.end());
    }
    SortedDataset once;
    once.insert_batch(all);
    bool same = inc.size() == once.size();
    for (std::size_t i = 0; same && i < all.size(); ++i)
        same = inc.entries()[i].value == once.entries()[i].value && inc.entries()[i].handle == once.entries()[i].handle;
    return {mismatches == 0 && same,
            fmt("%d oracle mismatches over 200 datasets; incremental (%zu values, 100 batches) %s one-shot", mismatches,
                all.size(), same ? "equals" : "differs from")};
}

Outcome monotone_invariance(Context& ctx) {
    Scenario s = load_scenario(scenario_dir / "two_obstacle.json");
    s.estimation.max_iterations = 8;
    s.estimation.sigma_M = s.estimation.sigma_E = 0.7;
    const PlumeCache& plumes = ctx.cache_for(s);
    std::vector<std::vector<Measurement>> batches;
    run_trial(s, plumes, [&](const IterationSnapshot&, const Posterior&, std::span<const Measurement> b) {
        batches.emplace_back(b.begin(), b.end());
    });

    const Posterior prior = make_prior(s.environment, s.estimation.prior_margin_cells);
    const auto trace = [&](FeatureKind kind, const std::function<double(double)>& f) {
        EstimatorConfig cfg;
        cfg.kind = kind;
        cfg.concentration_scale = s.concentration_scale;
        cfg.noise = kind == FeatureKind::value ? NoiseModel{0.1, 0.1} : NoiseModel{0.7, 0.7};
        SourceTermEstimator est(s.environment, plumes, prior, cfg);
        std::vector<std::vector<double>> out;
        for (auto b : batches) {
            for (auto& m : b) m.value = f(m.value);
            const auto p = est.add_batch(b).probability();
            out.emplace_back(p.begin(), p.end());
        }
        return out;
    };
    const auto max_diff = [](const auto& a, const auto& b) {
        double m = 0.0;
        for (std::size_t it = 0; it < a.size(); ++it)
            for (std::size_t j = 0; j < a[it].size(); ++j) m = std::max(m, std::abs(a[it][j] - b[it][j]));
        return m;
    };

    const auto identity = [](double v) { return v; };
    const auto rank_ref = trace(FeatureKind::rank, identity);
    const auto value_ref = trace(FeatureKind::value, identity);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double rank_worst = 0.0, value_least = INFINITY;
    for (int t = 0; t < 20; ++t) {
        std::function<double(double)> f;
        if (t % 3 == 0) {
            const double a = 0.2 + 3.0 * u(rng), c = 2.0 * u(rng) - 1.0;
            f = [a, c](double v) { return a * v + c; };
        } else if (t % 3 == 1) {
            const double a = 0.1 + u(rng), b = 0.1 + u(rng), c = u(rng);
            f = [a, b, c](double v) { return a * v * v * v + b * v + c; };
        } else {
            // Divider-shaped response of a second sensor to the reading.
            SensorParams p = sensor_I();
            p.R0 = 10.0 + 2000.0 * u(rng);
            p.k = -(0.5 + 2.0 * u(rng));
            f = [p](double v) { return concentration_to_voltage(p, 0.01 + v); };
        }
        rank_worst = std::max(rank_worst, max_diff(rank_ref, trace(FeatureKind::rank, f)));
        value_least = std::min(value_least, max_diff(value_ref, trace(FeatureKind::value, f)));
    }
    const bool ok = rank_worst <= 1e-12 && value_least > 1e-6 && !batches.empty();
    return {ok, fmt("%zu iterations, %zu samples: rank max |dp| = %.1e; value min over transforms of max |dp| = %.3f",
                    batches.size(), [&] { std::size_t n = 0; for (auto& b : batches) n += b.size(); return n; }(),
                    rank_worst, value_least)};
}

Outcome calibrated_benchmark(Context& ctx) {
    const BenchOutcome& o = ctx.full_outcome();
    const double cd = ctx.full_cfg->base.environment.cell_diagonal();
    bool ok = true;
    std::string d;
    const double value_it = group(o, "calibrated", FeatureKind::value).median_iterations;
    for (auto k : all_feature_kinds) {
        const auto& g = group(o, "calibrated", k);
        const bool err_ok = g.failed == 0 && g.median_error / cd <= 2.0;
        const bool it_ok = k == FeatureKind::value || value_it <= g.median_iterations;
        ok = ok && err_ok && it_ok;
        d += fmt("%s %.2f cd / %.1f it%s; ", std::string(to_string(k)).c_str(), g.median_error / cd,
                 g.median_iterations, err_ok && it_ok ? "" : " (fails)");
    }
    return {ok, d + "bound 2 cd, value iterations <= others"};
}

// Medians (cell diagonals) of the pinned-seed run, frozen as regression values.
struct Frozen {
    const char* sensor;
    FeatureKind feature;
    double median_cd;
};
const Frozen frozen_medians[] = {
    {"sensor_I", FeatureKind::value, 3.671710229432346},
    {"sensor_I", FeatureKind::fixed_hit, 8.549041152923033},
    {"sensor_I", FeatureKind::adaptive_hit, 5.036796290982292},
    {"sensor_I", FeatureKind::rank, 0.7071067811865475},
    {"sensor_II", FeatureKind::value, 21.28101482158553},
    {"sensor_II", FeatureKind::fixed_hit, 7.566662780082012},
    {"sensor_II", FeatureKind::adaptive_hit, 14.019202405202648},
    {"sensor_II", FeatureKind::rank, 0.7071067811865475},
};

Outcome uncalibrated_benchmark(Context& ctx) {
    const BenchOutcome& o = ctx.full_outcome();
    const double cd = ctx.full_cfg->base.environment.cell_diagonal();
    const auto med = [&](const char* s, FeatureKind k) { return group(o, s, k).median_error / cd; };
    const double r1 = med("sensor_I", FeatureKind::rank), r2 = med("sensor_II", FeatureKind::rank);
    const bool a = std::abs(r1 - r2) < 1.0;
    bool b = true, c = true;
    double margin = INFINITY;
    for (const char* s : {"sensor_I", "sensor_II"}) {
        const double r = med(s, FeatureKind::rank);
        b = b && r <= med(s, FeatureKind::adaptive_hit);
        for (auto k : {FeatureKind::value, FeatureKind::fixed_hit}) {
            margin = std::min(margin, med(s, k) - r);
            c = c && med(s, k) - r >= 2.0;
        }
    }
    bool frozen = true;
    for (const auto& f : frozen_medians) frozen = frozen && std::abs(med(f.sensor, f.feature) - f.median_cd) < 1e-6;
    std::string d = fmt("(a) rank I %.2f vs II %.2f cd; (b) adaptive I %.2f, II %.2f cd; (c) smallest value/fixed "
                        "margin over rank %.2f cd; frozen medians %s",
                        r1, r2, med("sensor_I", FeatureKind::adaptive_hit), med("sensor_II", FeatureKind::adaptive_hit),
                        margin, frozen ? "match" : "changed");
    return {a && b && c && frozen, d};
}

Outcome closed_loop_oracle(Context& ctx) {
    const BenchConfig cfg = load_bench_config(scenario_dir / "bench_closed_loop.json");
    const BenchOutcome o = run_benchmark(cfg, ctx.cache_for(cfg.base), ctx.work / "closed_loop", 1);
    ctx.all_records.insert(ctx.all_records.end(), o.records.begin(), o.records.end());
    int hits = 0;
    for (const auto& r : o.records) hits += r["status"] == "ok" && r["estimated_source"] == r["true_source"];
    return {hits == static_cast<int>(o.records.size()) && o.records.size() == 10,
            fmt("true source is the posterior argmax in %d/%zu trials", hits, o.records.size())};
}

Outcome posterior_invariants(Context& ctx) {
    ctx.full_outcome();
    std::size_t updates = 0, bad = 0, failed = 0;
    std::string first;
    for (const auto& r : ctx.all_records) {
        updates += r["posterior_updates"].get<std::size_t>();
        failed += r["status"] != "ok";
        for (const auto& v : r["invariant_violations"]) {
            ++bad;
            if (first.empty()) first = r["trial_id"].get<std::string>() + ": " + v.get<std::string>();
        }
    }
    return {bad == 0 && failed == 0 && updates > 0,
            fmt("%zu violations, %zu failed trials over %zu updates in %zu trials%s", bad, failed, updates,
                ctx.all_records.size(), first.empty() ? "" : (" (" + first + ")").c_str())};
}

Outcome plume_oracle(Context&) {
    const Environment env(80, 40, 0.25, {0.2, 0.0}, 0);
    const PlumeSettings s;
    const GridCoord src{20, 20};
    const PlumeField f = solve_plume(env, env.index_of(src), s);
    const double err = test_oracle::relative_l2_error(env, s, src, f, 3);
    return {err < 0.10, fmt("relative L2 error %.4f (3-cell margin excluded, %d sweeps)", err, f.sweeps)};
}

Outcome determinism(Context& ctx) {
    const auto run = [&](const std::string& name, int workers) {
        const fs::path out = ctx.work / name;
        fs::remove_all(out);
        const std::string cmd = std::string(RANKGSL_CLI) + " bench --quiet --config " +
                                (scenario_dir / "bench_full.json").string() + " --out " + out.string() +
                                " --workers " + std::to_string(workers) + " --cache-dir " +
                                (ctx.work / "plume_cache").string() + " >/dev/null 2>&1";
        const int st = std::system(cmd.c_str());
        return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    };
    const int a = run("determinism_a", 1), b = run("determinism_b", 2);
    if (a != 0 || b != 0) return {false, fmt("bench exited with %d and %d", a, b)};
    const auto ta = read_file(ctx.work / "determinism_a" / "trials.jsonl");
    const auto tb = read_file(ctx.work / "determinism_b" / "trials.jsonl");
    const auto sa = read_file(ctx.work / "determinism_a" / "summary.json");
    const auto sb = read_file(ctx.work / "determinism_b" / "summary.json");
    const bool same = !ta.empty() && ta == tb && sa == sb;
    return {same, fmt("trials.jsonl (%zu bytes) and summary.json %s across two runs (1 and 2 workers)", ta.size(),
                      same ? "byte-identical" : "differ")};
}

} // namespace

int main(int argc, char** argv) {
    Context ctx;
    ctx.work = fs::temp_directory_path() / "rankgsl_acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work-dir" && i + 1 < argc) {
            ctx.work = argv[++i];
        } else if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
        } else {
            std::fprintf(stderr, "usage: acceptance [--work-dir DIR] [--only N[,N...]]\n");
            return 2;
        }
    }
    fs::create_directories(ctx.work);

    const std::vector<std::pair<const char*, Outcome (*)(Context&)>> criteria{
        {"sensor round trip", sensor_round_trip},
        {"first-order dynamics", dynamics},
        {"noise model", noise},
        {"EDF correctness and incrementality", edf},
        {"monotone-transform invariance", monotone_invariance},
        {"calibrated benchmark", calibrated_benchmark},
        {"uncalibrated benchmark", uncalibrated_benchmark},
        {"closed-loop oracle", closed_loop_oracle},
        {"posterior invariants", posterior_invariants},
        {"plume solver vs closed form", plume_oracle},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!only.empty() && !only.contains(n)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += !o.pass;
        std::printf("[%s] criterion %2d: %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
