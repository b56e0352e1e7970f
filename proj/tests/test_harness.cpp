#include "catch_amalgamated.hpp"

#include "rankgsl/harness.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

using namespace rankgsl;
using Catch::Approx;

namespace {

const std::filesystem::path scenario_dir = RANKGSL_SCENARIOS;

Scenario small_scenario() {
    Scenario s;
    s.id = "small";
    s.environment = Environment(24, 12, 0.25, {0.2, 0.0}, 5, {{2.5, 1.0, 3.0, 1.75}});
    s.concentration_scale = 10.0;
    s.true_source_cell = s.environment.index_of({16, 6});
    s.robot_start = {0.375, 0.625};
    s.estimation.max_iterations = 8;
    s.estimation.sigma_M = s.estimation.sigma_E = 0.7;
    return s;
}

std::filesystem::path temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("rankgsl_harness_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& p) {
    std::vector<nlohmann::json> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
    return out;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(RANKGSL_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_CASE("seed mixing is deterministic and spreads streams", "[harness]") {
    CHECK(mix_seed(7, 0) == mix_seed(7, 0));
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 20; ++s)
        for (std::uint64_t k = 0; k < 20; ++k) seen.insert(mix_seed(s, k));
    CHECK(seen.size() == 400);
    const Environment e = with_seed(small_scenario().environment, 99);
    CHECK(e.seed() == 99);
    CHECK(e.obstacle_mask() == small_scenario().environment.obstacle_mask());
}

TEST_CASE("localization error is the distance between cell centers", "[harness]") {
    // A single candidate cell forces the estimate three columns and four rows
    // away from the true source.
    Scenario s;
    s.environment = Environment(9, 9, 1.0, {0.1, 0.0}, 1);
    s.true_source_cell = s.environment.index_of({1, 0});
    s.robot_start = {0.5, 8.5};
    s.estimation.prior_margin_cells = 4;
    s.estimation.max_iterations = 1;
    PlumeCache plumes(s.environment, s.plume);
    const TrialResult r = run_trial(s, plumes);
    CHECK(r.estimated_source == GridCoord{4, 4});
    CHECK(r.localization_error == Approx(5.0));
    CHECK(r.termination == Termination::max_iter);
}

TEST_CASE("trials are deterministic for a seed", "[harness]") {
    const Scenario s = small_scenario();
    PlumeCache plumes(s.environment, s.plume);
    const auto a = trial_record(run_trial(s, plumes));
    const auto b = trial_record(run_trial(s, plumes));
    CHECK(a.dump() == b.dump());
    CHECK_FALSE(trial_record_problem(a));
    CHECK(a["invariant_violations"].empty());
    CHECK(a["entropy_trace"].size() == a["posterior_updates"].get<std::size_t>());

    Scenario other = s;
    other.environment = with_seed(s.environment, 6);
    CHECK(trial_record(run_trial(other, plumes))["entropy_trace"] != a["entropy_trace"]);
}

TEST_CASE("observer sees every update", "[harness]") {
    const Scenario s = small_scenario();
    PlumeCache plumes(s.environment, s.plume);
    std::vector<nlohmann::json> dumps;
    const TrialResult r = run_trial(s, plumes, [&](const IterationSnapshot& snap, const Posterior& p, auto batch) {
        dumps.push_back(posterior_record(s.environment, snap, p, batch));
    });
    REQUIRE(dumps.size() == static_cast<std::size_t>(r.posterior_updates));
    for (std::size_t i = 0; i < dumps.size(); ++i) {
        CHECK(dumps[i]["iteration"] == i + 1);
        CHECK(dumps[i]["probability"].size() == s.environment.cell_count());
        CHECK(dumps[i]["entropy"].get<double>() == r.entropy_trace[i]);
    }
}

TEST_CASE("trial fails loudly on a mismatched plume cache", "[harness]") {
    const Scenario s = small_scenario();
    const Environment other(24, 12, 0.25, {0.3, 0.0}, 5);
    PlumeCache plumes(other, s.plume);
    CHECK_THROWS_AS(run_trial(s, plumes), DomainError);
}

TEST_CASE("record schema rejects malformed records", "[harness]") {
    const Scenario s = small_scenario();
    PlumeCache plumes(s.environment, s.plume);
    const auto good = trial_record(run_trial(s, plumes));
    REQUIRE_FALSE(trial_record_problem(good));

    auto bad = good;
    bad.erase("seed");
    CHECK(trial_record_problem(bad) == "missing 'seed'");
    bad = good;
    bad["feature"] = "smell";
    CHECK(trial_record_problem(bad).has_value());
    bad = good;
    bad["localization_error"] = -1.0;
    CHECK(trial_record_problem(bad).has_value());
    bad = good;
    bad["entropy_trace"].push_back(0.5);
    CHECK(trial_record_problem(bad) == "'entropy_trace' length must equal 'posterior_updates'");

    const auto failed = trial_record(failed_trial(s, "boom", ErrorCategory::unreachable));
    CHECK_FALSE(trial_record_problem(failed));
    CHECK(failed["status"] == "failed");
    CHECK(failed["error_category"] == "unreachable");
    CHECK(failed["localization_error"].is_null());
}

TEST_CASE("posterior invariants are checked", "[harness]") {
    const Environment env(4, 4, 1.0, {0, 0}, 0, {{0.0, 0.0, 1.0, 1.0}});
    std::vector<double> p(16, 1.0 / 15);
    p[0] = 0.0;
    CHECK_FALSE(posterior_invariant_violation(env, Posterior(p)));
    p[0] = 1.0 / 15;
    p[1] = 0.0;
    CHECK(posterior_invariant_violation(env, Posterior(p)).value().find("obstacle") != std::string::npos);
    std::vector<double> q(16, 0.0);
    q[5] = 0.9;
    CHECK(posterior_invariant_violation(env, Posterior(q)).value().find("sum") != std::string::npos);
}

TEST_CASE("quantiles interpolate linearly", "[harness]") {
    CHECK(quantile({4, 1, 3, 2}, 0.5) == 2.5);
    CHECK(quantile({4, 1, 3, 2}, 0.25) == 1.75);
    CHECK(quantile({7}, 0.75) == 7);
    CHECK_THROWS_AS(quantile({}, 0.5), DomainError);
}

TEST_CASE("summary is recomputed from records", "[harness]") {
    std::vector<nlohmann::json> recs;
    const auto rec = [](const char* sensor, const char* feature, double err, int it, const char* term) {
        return nlohmann::json{{"sensor", sensor}, {"feature", feature}, {"status", "ok"}, {"localization_error", err},
                              {"iterations_used", it}, {"termination", term}};
    };
    recs.push_back(rec("sensor_I", "rank", 0.5, 10, "converged"));
    recs.push_back(rec("sensor_I", "value", 3.0, 30, "max_iter"));
    recs.push_back(rec("sensor_I", "rank", 0.0, 12, "converged"));
    recs.push_back(rec("sensor_I", "rank", 1.0, 30, "max_iter"));
    recs.push_back({{"sensor", "sensor_I"}, {"feature", "value"}, {"status", "failed"}});
    const auto g = summarize(recs);
    REQUIRE(g.size() == 2);
    CHECK(g[0].feature == FeatureKind::rank);
    CHECK(g[0].trials == 3);
    CHECK(g[0].converged == 2);
    CHECK(g[0].median_error == 0.5);
    CHECK(g[0].iqr_error == 0.5);
    CHECK(g[0].median_iterations == 12);
    CHECK(g[1].trials == 2);
    CHECK(g[1].failed == 1);
    CHECK(g[1].median_error == 3.0);
    const auto j = summary_json(g, 0.5);
    CHECK(j["groups"][1]["median_error_cells"] == 6.0);
}

TEST_CASE("benchmark expansion shares placements across conditions", "[harness]") {
    BenchConfig cfg;
    cfg.base = small_scenario();
    cfg.seed = 3;
    cfg.replicates = 4;
    cfg.noise[FeatureKind::rank] = {0.9, 0.8};
    const auto jobs = expand_benchmark(cfg);
    REQUIRE(jobs.size() == 3 * 4 * 4);
    const double min_sep = 0.25 * std::hypot(cfg.base.environment.width_m(), cfg.base.environment.height_m());
    for (const auto& job : jobs) {
        const Scenario& s = job.scenario;
        const std::size_t r = job.index % 4;
        const Scenario& ref = jobs[r].scenario;
        CHECK(s.true_source_cell == ref.true_source_cell);
        CHECK(s.robot_start.x == ref.robot_start.x);
        CHECK(s.environment.seed() == ref.environment.seed());
        CHECK(distance(cell_center(s.environment, s.true_source_cell), s.robot_start) >= min_sep);
        CHECK(make_prior(s.environment, 1)[s.true_source_cell] > 0.0);
    }
    CHECK(jobs[0].scenario.id == "bench/calibrated/value/r0");
    CHECK(jobs[0].scenario.calibrated);
    CHECK(jobs[16].scenario.sensor_params.R0 == 100.0);
    CHECK_FALSE(jobs[16].scenario.calibrated);
    CHECK(jobs[32].scenario.sensor_params.R0 == 1500.0);
    CHECK(jobs[12].scenario.feature.kind == FeatureKind::rank);
    CHECK(jobs[12].scenario.estimation.sigma_M == 0.9);
    CHECK(jobs[0].scenario.estimation.sigma_M == 0.7);
    std::set<std::uint64_t> seeds;
    for (int r = 0; r < 4; ++r) seeds.insert(jobs[r].scenario.environment.seed());
    CHECK(seeds.size() == 4);
}

TEST_CASE("benchmark writes ordered, reproducible logs", "[harness]") {
    BenchConfig cfg;
    cfg.base = small_scenario();
    cfg.base.estimation.max_iterations = 4;
    cfg.seed = 11;
    cfg.replicates = 2;
    cfg.features = {FeatureKind::rank, FeatureKind::fixed_hit};
    cfg.sensors = {"sensor_I", "sensor_II"};
    cfg.dump_posteriors = true;
    PlumeCache plumes(cfg.base.environment, cfg.base.plume);
    const auto a = temp_dir("bench_a"), b = temp_dir("bench_b");
    const auto out_a = run_benchmark(cfg, plumes, a, 1);
    const auto out_b = run_benchmark(cfg, plumes, b, 3);
    CHECK(read_file(a / "trials.jsonl") == read_file(b / "trials.jsonl"));

    const auto recs = read_jsonl(a / "trials.jsonl");
    REQUIRE(recs.size() == 8);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK_FALSE(trial_record_problem(recs[i]));
        CHECK(recs[i] == out_a.records[i]);
        CHECK(std::filesystem::exists(a / "posteriors" / (std::to_string(i) + ".jsonl")));
    }
    CHECK(recs[0]["trial_id"] == "bench/sensor_I/rank/r0");
    CHECK(recs[7]["trial_id"] == "bench/sensor_II/fixed_hit/r1");
    CHECK(read_jsonl(a / "timings.jsonl").size() == 8);

    const auto summary = nlohmann::json::parse(read_file(a / "summary.json"));
    CHECK(summary == summary_json(summarize(recs), cfg.base.environment.cell_diagonal()));
    CHECK(out_b.plume_solves == 0);

    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST_CASE("bench config files load", "[harness]") {
    const BenchConfig c = load_bench_config(scenario_dir / "bench_full.json");
    CHECK(c.seed == 7);
    CHECK(c.replicates == 10);
    CHECK(c.features.size() == 4);
    CHECK(c.sensors.size() == 3);
    CHECK(c.noise.at(FeatureKind::rank).sigma_E == 0.7);
    CHECK_FALSE(c.noise.contains(FeatureKind::value));
    CHECK(c.base == load_scenario(scenario_dir / "two_obstacle.json"));

    const auto bad = nlohmann::json{{"scenario", "two_obstacle.json"}, {"sensors", {"sensor_III"}}};
    CHECK_THROWS_AS(bench_config_from_json(bad, scenario_dir), ValidationError);
    CHECK_THROWS_AS(bench_config_from_json(nlohmann::json{{"seed", 1}}, scenario_dir), ParseError);
    CHECK_THROWS_AS(bench_config_from_json(
                        nlohmann::json{{"scenario", "two_obstacle.json"}, {"noise", {{"rank", {{"sigma_M", 0.5}}}}}},
                        scenario_dir),
                    ParseError);
}

TEST_CASE("CLI maps error categories to exit codes", "[harness][cli]") {
    const auto dir = temp_dir("cli");
    const Scenario base = small_scenario();
    const auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream(dir / name) << text;
        return (dir / name).string();
    };
    const std::string good = write("good.json", dump_scenario(base));
    const std::string cache = " --cache-dir none";

    CHECK(run_cli("run --scenario " + good + cache + " --out " + dir.string()) == 0);
    CHECK(run_cli("run --scenario " + write("broken.json", "{ \"id\": ") + cache) == 3);

    auto j = scenario_to_json(base);
    j["environment"]["cell_size"] = 0.0;
    CHECK(run_cli("run --scenario " + write("invalid.json", j.dump()) + cache) == 4);

    j = scenario_to_json(base);
    j["plume"]["max_sweeps"] = 1;
    CHECK(run_cli("run --scenario " + write("stiff.json", j.dump()) + cache) == 5);

    // Robot walled into its own cell.
    j = scenario_to_json(base);
    j["robot_start"] = {0.125, 0.125};
    j["environment"]["obstacles"] = {{0.25, 0.0, 0.5, 0.5}, {0.0, 0.25, 0.25, 0.5}};
    CHECK(run_cli("run --scenario " + write("walled.json", j.dump()) + cache) == 6);

    CHECK(run_cli("solve-plume --scenario " + good + " --source 100,2" + cache) == 4);
    CHECK(run_cli("solve-plume --scenario " + good + " --source x" + cache) == 3);
    CHECK(run_cli("solve-plume --scenario " + good + " --source 3,3 --out " + (dir / "f.json").string() + cache) == 0);
    CHECK(nlohmann::json::parse(read_file(dir / "f.json"))["concentration"].size() == base.environment.cell_count());

    write("blocker", "x");
    CHECK(run_cli("run --scenario " + good + cache + " --dump-posteriors --out " + (dir / "blocker" / "sub").string()) ==
          8);
    CHECK(run_cli("frobnicate") != 0);
    std::filesystem::remove_all(dir);
}
