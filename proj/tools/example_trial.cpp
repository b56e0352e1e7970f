// Minimal library use: build a scenario in code, run one trial, print the
// posterior peak after every iteration.

#include "rankgsl/harness.hpp"

#include <cstdio>

int main() {
    using namespace rankgsl;
    Scenario s;
    s.id = "example";
    s.environment = Environment(80, 40, 0.25, {0.2, 0.0}, 3, {{7.5, 2.5, 8.5, 4.5}, {11.5, 5.5, 12.5, 7.5}});
    s.concentration_scale = 10.0;
    s.true_source_cell = s.environment.index_of({20, 28});
    s.robot_start = {17.125, 3.125};
    s.feature.kind = FeatureKind::rank;
    s.estimation.sigma_M = s.estimation.sigma_E = 0.7;

    PlumeCache plumes(s.environment, s.plume);
    const auto& env = s.environment;
    const TrialResult r = run_trial(s, plumes, [&](const IterationSnapshot& it, const Posterior& post, auto batch) {
        const GridCoord g = env.coord_of(it.argmax);
        std::printf("iteration %2d: %3zu samples, entropy %.3f, peak (%d,%d) p=%.3f\n", it.iteration, batch.size(),
                    it.entropy, g.col, g.row, post[it.argmax]);
    });
    std::printf("%s after %d iterations: estimate (%d,%d), true (%d,%d), error %.2f m\n",
                std::string(to_string(r.termination)).c_str(), r.iterations_used, r.estimated_source.col,
                r.estimated_source.row, r.true_source.col, r.true_source.row, r.localization_error);
}
