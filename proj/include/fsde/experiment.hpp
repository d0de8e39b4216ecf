#pragma once

#include <map>
#include <string>
#include <vector>

#include "fsde/llsolver.hpp"
#include "fsde/reference.hpp"
#include "fsde/scorematch.hpp"
#include "fsde/sde.hpp"

namespace fsde {

// Flat sectioned key=value configuration. Unknown keys are hard errors that
// name the key and line; every field has a documented default (see
// config_schema_text()).
struct Config {
    // root
    std::string name = "run";
    std::string benchmark = "ou";
    int dimension = 10;
    double alpha = 1.95;
    std::uint64_t seed = 1;
    std::string scheme = "forward"; // forward | implicit
    std::string route = "fsm";      // fsm | mixed-fsm | score-fpinn | none
    int workers = 0;                // 0 = library default
    std::string initial = "";      // override: gaussian | anisotropic | laplacian | mixture | point-mass

    // [grid]
    long grid_steps = 500;
    double horizon = -1.0; // -1: benchmark default
    std::string record = "decile"; // terminal | decile | all

    // [score] fractional-score stage
    TrainPlan score_plan;
    int score_width = 128;
    int score_hidden = 3;
    std::string time_sampling = "continuous"; // continuous | grid
    std::vector<double> grid_times;           // empty: deciles of the horizon

    // [s2] SSM stage (score-fpinn route)
    TrainPlan s2_plan;

    // [ll]
    TrainPlan ll_plan;
    int ll_width = 128;
    int ll_hidden = 3;
    std::string constraint = "auto"; // auto | hard | soft

    // [pool] trajectory pool for simulate-backed benchmarks
    long pool_trajectories = 20000;

    // [oracle]
    std::string oracle = "mc"; // mc | radial-kde | exact
    long n_mc = 1000000;
    long oracle_samples = 1000000;
    long test_points = 2000;
    double drop_fraction = 0.1;
    double eval_time = -1.0; // -1: horizon

    // [eval] CI gate; 0 disables
    double gate_ll_rel_l2 = 0.0;

    // [output]
    std::string out_dir = "out";

    static Config load(const std::string& path);
    static Config from_text(const std::string& text, const std::string& origin);

    // canonical serialization of every resolved value (basis of the config hash)
    std::string canonical() const;
    std::uint64_t hash() const;

    Benchmark benchmark_id() const;
    SdeSpec make_spec() const;
    double resolved_horizon() const;
    double resolved_eval_time() const;
};

std::string config_schema_text();

// --- pipeline stages ---------------------------------------------------------

// Every stage writes its artifacts under <out_dir>/<name>/ and updates
// manifest.json. Stage failures propagate as exceptions after leaving
// existing artifacts untouched.
void stage_sample_stable(const Config& cfg);
void stage_simulate(const Config& cfg);
void stage_train_score(const Config& cfg);
void stage_solve_ll(const Config& cfg);
void stage_make_reference(const Config& cfg);
// returns the report; appends a results row; throws nothing on gate failure
// but reports it through the return value
EvalReport stage_evaluate(const Config& cfg, bool* gate_failed = nullptr);
EvalReport stage_full(const Config& cfg, bool* gate_failed = nullptr);

// Consolidated CSV mirroring the main results table layout, sorted by
// (method, dimension, alpha). Inputs are per-run results.csv paths.
void results_table(const std::vector<std::string>& row_files,
                   const std::string& out_path);

std::string run_dir(const Config& cfg);

} // namespace fsde
