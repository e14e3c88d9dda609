// Command-line surface of the laboratory:
//   adlab run <config>        execute the configured experiment, emit reports
//   adlab check <config>      validate the config and scenario, run no sweep
//   adlab invariants <name>   run the invariant suite for a builtin scenario
//   adlab list-scenarios      print the builtin catalog
//
// Exit codes: 0 = everything passed; 1 = the run completed but a gating check
// failed; 2 = configuration or usage error.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adlab/experiment.hpp"

namespace {

using namespace adlab;

void print_invariants(const std::vector<InvariantRow>& rows) {
    std::printf("  %-52s %12s %12s  %s\n", "invariant", "value", "threshold", "status");
    for (const InvariantRow& r : rows)
        std::printf("  %-52s %12.4e %12.4e  %s\n", r.check.c_str(), r.value, r.threshold,
                    r.pass ? "pass" : "FAIL");
}

void print_sweeps(const std::vector<SweepResult>& sweeps) {
    for (const SweepResult& r : sweeps) {
        std::printf("  %-16s %zu samples", r.defect_kind.c_str(), r.samples.size());
        if (!r.samples.empty())
            std::printf("  defect %.4e -> %.4e", r.samples.front().sup_defect,
                        r.samples.back().sup_defect);
        if (r.fit)
            std::printf("  [%s fit: %s = %.4f, r^2 = %.5f]", r.fit->model.c_str(),
                        r.fit->model == "power" ? "slope" : "g", r.fit->slope_or_g,
                        r.fit->r_squared);
        std::printf("\n");
        for (const auto& [eps, err] : r.failed)
            std::printf("    FAILED at epsilon = %g: %s\n", eps, err.c_str());
    }
}

int print_report(const Report& rep, const OutputSpec& out) {
    std::printf("scenario %s | harness %s | wall %.2f s\n", rep.scenario_id.c_str(),
                rep.harness.c_str(), rep.wall_seconds);
    std::printf("invariant suite (%s):\n", rep.invariants_pass ? "pass" : "FAIL");
    print_invariants(rep.invariants);
    if (!rep.sweeps.empty()) {
        std::printf("sweeps (%s):\n", rep.sweeps_clean ? "clean" : "FAILURES");
        print_sweeps(rep.sweeps);
    }
    for (const std::string& path : emit_report(rep, out))
        std::printf("wrote %s\n", path.c_str());
    std::printf("%s\n", rep.pass ? "PASS" : "FAIL");
    return rep.pass ? 0 : 1;
}

struct RunFlags {
    std::string config_path;
    std::vector<double> epsilons;
    int grid_points = 0;
    double tol = 0.0;
    int workers = -1;
    std::string output_dir;
    std::string basename;
    std::vector<std::string> formats;
};

void apply_overrides(ExperimentConfig& cfg, const RunFlags& f) {
    if (!f.epsilons.empty()) cfg.epsilon_list = f.epsilons;
    if (f.grid_points > 0) cfg.grid_points = f.grid_points;
    if (f.tol > 0.0) cfg.tol = f.tol;
    if (f.workers >= 0) cfg.workers = f.workers;
    if (!f.output_dir.empty()) cfg.output.directory = f.output_dir;
    if (!f.basename.empty()) cfg.output.basename = f.basename;
    if (!f.formats.empty()) cfg.output.formats = f.formats;
    if (cfg.output.enabled() && cfg.output.formats.empty())
        cfg.output.formats = {"json", "csv", "plotdata"};
    // re-validate through the canonical parser so overrides obey the same rules
    cfg = parse_experiment_config(config_to_json(cfg));
}

int cmd_run(const RunFlags& flags) {
    ExperimentConfig cfg = load_config_file(flags.config_path);
    apply_overrides(cfg, flags);
    const Report rep = run_experiment(cfg);
    return print_report(rep, cfg.output);
}

int cmd_check(const RunFlags& flags) {
    ExperimentConfig cfg = load_config_file(flags.config_path);
    apply_overrides(cfg, flags);
    const LoadedScenario sc = load_experiment_scenario(cfg);
    const std::vector<InvariantRow> rows =
        sc.is_form ? invariant_table(*sc.form, cfg.grid_points, cfg.seed)
                   : invariant_table(*sc.spectral, cfg.grid_points);
    const bool pass = std::all_of(rows.begin(), rows.end(),
                                  [](const InvariantRow& r) { return r.pass; });
    std::printf("config ok: scenario %s, harness %s, %zu epsilon(s), grid %d, tol %g\n",
                sc.id().c_str(), cfg.harness.c_str(), cfg.epsilon_list.size(),
                cfg.grid_points, cfg.tol);
    print_invariants(rows);
    std::printf("%s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

int cmd_invariants(const std::string& key, int grid_points, int dim,
                   std::uint64_t seed) {
    std::vector<InvariantRow> rows;
    if (key == "S6" || key == "form_crossing") {
        rows = invariant_table(load_form_scenario(key, dim), grid_points, seed);
    } else {
        rows = invariant_table(make_scenario(key), grid_points);
    }
    const bool pass = std::all_of(rows.begin(), rows.end(),
                                  [](const InvariantRow& r) { return r.pass; });
    std::printf("scenario %s invariant suite:\n", key.c_str());
    print_invariants(rows);
    std::printf("%s\n", pass ? "PASS" : "FAIL");
    return pass ? 0 : 1;
}

int cmd_list() {
    std::printf("%-4s %-22s %-9s %s\n", "id", "name", "kind", "description");
    for (const ScenarioInfo& info : scenario_catalog())
        std::printf("%-4s %-22s %-9s %s\n", info.id.c_str(), info.name.c_str(),
                    info.kind.c_str(), info.description.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"numerical laboratory for adiabatic evolution families"};
    app.set_version_flag("--version",
                         std::string(adlab::software_name) + " " +
                             adlab::software_version);
    app.require_subcommand(1);

    RunFlags flags;
    auto add_common = [&flags](CLI::App* sub) {
        sub->add_option("config", flags.config_path, "path to a JSON experiment config")
            ->required();
        sub->add_option("--epsilons", flags.epsilons,
                        "override epsilon_list (comma-separated, strictly decreasing)")
            ->delimiter(',');
        sub->add_option("--grid-points", flags.grid_points, "override grid_points");
        sub->add_option("--tol", flags.tol, "override integration tolerance");
        sub->add_option("--workers", flags.workers,
                        "override worker count (default: ADLAB_WORKERS or 1)");
        sub->add_option("--output", flags.output_dir, "override output directory");
        sub->add_option("--basename", flags.basename, "override output basename");
        sub->add_option("--formats", flags.formats,
                        "override output formats (json,csv,plotdata)")
            ->delimiter(',');
    };

    CLI::App* run = app.add_subcommand("run", "execute the configured experiment");
    add_common(run);

    CLI::App* check =
        app.add_subcommand("check", "validate the config and scenario without sweeping");
    add_common(check);

    std::string inv_scenario;
    int inv_grid = 65;
    int inv_dim = 16;
    std::uint64_t inv_seed = 20260815u;
    CLI::App* inv =
        app.add_subcommand("invariants", "run the invariant suite for a builtin scenario");
    inv->add_option("scenario", inv_scenario, "catalog key, e.g. S1 or form_crossing")
        ->required();
    inv->add_option("--grid-points", inv_grid, "validation grid size");
    inv->add_option("--dim", inv_dim, "sine modes for the form scenario");
    inv->add_option("--seed", inv_seed, "seed for randomized probes");

    CLI::App* list = app.add_subcommand("list-scenarios", "print the builtin catalog");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help/usage text
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(flags);
        if (check->parsed()) return cmd_check(flags);
        if (inv->parsed()) return cmd_invariants(inv_scenario, inv_grid, inv_dim, inv_seed);
        if (list->parsed()) return cmd_list();
    } catch (const adlab::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
