#include "fsde/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fsde/kernels.hpp"

namespace fsde {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* VERSION = "fsolve 0.1.0";

struct RawEntry {
    std::string value;
    int line;
};

using RawConfig = std::map<std::pair<std::string, std::string>, RawEntry>;

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// schema: section -> keys (with one-line help used by config_schema_text)
const std::vector<std::tuple<std::string, std::string, std::string, std::string>>&
schema() {
    static const std::vector<std::tuple<std::string, std::string, std::string, std::string>> s = {
        {"", "name", "run", "run identifier; artifacts land in <output.dir>/<name>/"},
        {"", "benchmark", "ou", "ou | basic | complicated | pure-levy | tanh | polynomial | heat1d"},
        {"", "dimension", "10", "state dimension d"},
        {"", "alpha", "1.95", "stability index in (0, 2]"},
        {"", "seed", "1", "root seed; per-stage seeds are derived splits"},
        {"", "scheme", "forward", "EM scheme for simulation pools: forward | implicit"},
        {"", "route", "fsm", "score route: fsm | mixed-fsm | score-fpinn | none"},
        {"", "workers", "0", "thread cap; 0 keeps the OpenMP default"},
        {"", "initial", "", "initial-law override: gaussian | anisotropic | laplacian | mixture | point-mass"},
        {"grid", "steps", "500", "EM steps over the horizon"},
        {"grid", "horizon", "-1", "terminal time; -1 uses the benchmark default"},
        {"grid", "record", "decile", "recorded slices for simulate: terminal | decile | all"},
        {"score", "epochs", "20000", "fractional-score epochs (paper scale: 100000)"},
        {"score", "batch", "0", "residual points per epoch; 0 = 10000 continuous / 1000 otherwise"},
        {"score", "width", "128", "hidden width of the score nets"},
        {"score", "hidden", "3", "hidden layers (3 = four-layer net)"},
        {"score", "lr", "1e-3", "initial Adam learning rate"},
        {"score", "decay_rate", "0.9", "exponential decay per interval"},
        {"score", "decay_interval", "10000", "epochs per decay step"},
        {"score", "beta", "1", "smooth-L1 threshold; inf recovers L2"},
        {"score", "t_min", "1e-3", "smallest residual time (fractional score explodes at 0)"},
        {"score", "seed", "0", "stage seed; 0 derives from the root seed"},
        {"score", "time_sampling", "continuous", "continuous | grid (complicated always uses grid)"},
        {"score", "grid_times", "", "comma list; empty = deciles of the horizon"},
        {"s2", "epochs", "20000", "SSM epochs (score-fpinn route)"},
        {"s2", "batch", "0", "SSM batch; 0 mirrors [score]"},
        {"s2", "lr", "1e-3", "SSM learning rate"},
        {"s2", "decay_rate", "0.9", "SSM decay rate"},
        {"s2", "decay_interval", "10000", "SSM decay interval"},
        {"s2", "seed", "0", "SSM seed; 0 derives from the root seed"},
        {"ll", "epochs", "8000", "LL-PDE epochs (paper scale: 10000-100000)"},
        {"ll", "batch", "0", "LL residual batch; 0 = 10000 continuous / 1000 otherwise"},
        {"ll", "width", "128", "hidden width of the LL net"},
        {"ll", "hidden", "3", "hidden layers of the LL net"},
        {"ll", "lr", "1e-3", "LL learning rate"},
        {"ll", "decay_rate", "0.9", "LL decay rate"},
        {"ll", "decay_interval", "10000", "LL decay interval"},
        {"ll", "beta", "1", "smooth-L1 threshold for the LL losses"},
        {"ll", "t_min", "1e-3", "smallest residual time for LL training"},
        {"ll", "seed", "0", "stage seed; 0 derives from the root seed"},
        {"ll", "constraint", "auto", "auto | hard | soft initial condition handling"},
        {"ll", "lambda_initial", "20", "soft-mode initial loss weight"},
        {"ll", "lambda_residual", "1", "residual loss weight"},
        {"pool", "trajectories", "20000", "trajectory pool size for simulate-backed training"},
        {"oracle", "kind", "mc", "reference: mc | radial-kde | exact"},
        {"oracle", "n_mc", "1000000", "Monte-Carlo oracle sample budget"},
        {"oracle", "samples", "1000000", "radial-KDE sample budget"},
        {"oracle", "test_points", "2000", "evaluation points"},
        {"oracle", "drop_fraction", "0.1", "lowest-LL fraction dropped before metrics"},
        {"oracle", "eval_time", "-1", "evaluation time; -1 = horizon"},
        {"eval", "gate_ll_rel_l2", "0", "CI gate on LL rel-L2; 0 disables (exit 4 on breach)"},
        {"output", "dir", "out", "artifact root directory"},
    };
    return s;
}

bool schema_has(const std::string& sec, const std::string& key) {
    for (const auto& [s, k, d, h] : schema())
        if (s == sec && k == key) return true;
    return false;
}

RawConfig parse_raw(const std::string& text, const std::string& origin) {
    RawConfig out;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": malformed section header '" + t + "'");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected key = value, got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!schema_has(section, key))
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": unknown key '" +
                              (section.empty() ? key : section + "." + key) + "'");
        out[{section, key}] = {value, lineno};
    }
    return out;
}

class Reader {
public:
    Reader(const RawConfig& raw, const std::string& origin)
        : raw_(raw), origin_(origin) {}

    std::string str(const std::string& sec, const std::string& key,
                    const std::string& dflt) const {
        const auto it = raw_.find({sec, key});
        return it == raw_.end() ? dflt : it->second.value;
    }
    double num(const std::string& sec, const std::string& key, double dflt) const {
        const auto it = raw_.find({sec, key});
        if (it == raw_.end()) return dflt;
        try {
            std::size_t pos = 0;
            const std::string& v = it->second.value;
            const double x = v == "inf" ? std::numeric_limits<double>::infinity()
                                        : std::stod(v, &pos);
            if (v != "inf" && pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ":" + std::to_string(it->second.line) +
                              ": key '" + key + "' is not a number: '" +
                              it->second.value + "'");
        }
    }
    long integer(const std::string& sec, const std::string& key, long dflt) const {
        const double v = num(sec, key, (double)dflt);
        return (long)std::llround(v);
    }
    std::vector<double> list(const std::string& sec, const std::string& key) const {
        const auto it = raw_.find({sec, key});
        std::vector<double> out;
        if (it == raw_.end() || it->second.value.empty()) return out;
        std::istringstream is(it->second.value);
        std::string tok;
        while (std::getline(is, tok, ',')) out.push_back(std::stod(trim(tok)));
        return out;
    }

private:
    const RawConfig& raw_;
    std::string origin_;
};

TrainPlan read_plan(const Reader& r, const std::string& sec, long epochs_dflt,
                    std::uint64_t derived_seed) {
    TrainPlan p;
    p.epochs = r.integer(sec, "epochs", epochs_dflt);
    p.batch_size = r.integer(sec, "batch", 0); // 0 resolved by caller
    p.lr0 = r.num(sec, "lr", 1e-3);
    p.decay_rate = r.num(sec, "decay_rate", 0.9);
    p.decay_interval = r.integer(sec, "decay_interval", 10000);
    p.smooth_l1_beta = r.num(sec, "beta", 1.0);
    p.lambda_initial = r.num(sec, "lambda_initial", 20.0);
    p.lambda_residual = r.num(sec, "lambda_residual", 1.0);
    p.t_min = r.num(sec, "t_min", 1e-3);
    const long s = r.integer(sec, "seed", 0);
    p.seed = s == 0 ? derived_seed : (std::uint64_t)s;
    return p;
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw NumericError("cannot create directory " + path + ": " + ec.message());
}

json load_manifest(const std::string& dir) {
    const std::string path = dir + "/manifest.json";
    std::ifstream f(path);
    if (!f) return json::object();
    json j;
    try {
        f >> j;
    } catch (const std::exception&) {
        return json::object();
    }
    return j;
}

void update_manifest(const Config& cfg, const std::string& stage, json fields) {
    const std::string dir = run_dir(cfg);
    json j = load_manifest(dir);
    char hash_buf[32];
    std::snprintf(hash_buf, sizeof hash_buf, "%016llx",
                  (unsigned long long)cfg.hash());
    j["name"] = cfg.name;
    j["config_hash"] = hash_buf;
    j["version"] = VERSION;
    j["benchmark"] = cfg.benchmark;
    j["dimension"] = cfg.dimension;
    j["alpha"] = cfg.alpha;
    j["seed"] = cfg.seed;
    j["seeds"]["score"] = cfg.score_plan.seed;
    j["seeds"]["s2"] = cfg.s2_plan.seed;
    j["seeds"]["ll"] = cfg.ll_plan.seed;
    j["stages"][stage] = std::move(fields);
    std::ofstream f(dir + "/manifest.json", std::ios::trunc);
    f << j.dump(2) << "\n";
}

struct StageTimer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    }
};

void write_train_log(const std::string& path, const std::vector<TrainLogRow>& log) {
    std::ofstream f(path, std::ios::trunc);
    f << "epoch,lr,loss,wall_ms\n";
    char buf[128];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof buf, "%ld,%.6g,%.10g,%.1f\n", r.epoch, r.lr,
                      r.loss, r.wall_ms);
        f << buf;
    }
}

void write_points_csv(const std::string& path, const Mat& pts) {
    std::ofstream f(path, std::ios::trunc);
    char buf[40];
    for (int i = 0; i < pts.rows; ++i) {
        for (int c = 0; c < pts.cols; ++c) {
            std::snprintf(buf, sizeof buf, c ? ",%.17g" : "%.17g", pts(i, c));
            f << buf;
        }
        f << "\n";
    }
}

Mat read_points_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("missing artifact " + path + "; run the earlier stages");
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        std::vector<double> row;
        std::istringstream is(line);
        std::string tok;
        while (std::getline(is, tok, ',')) row.push_back(std::stod(tok));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw NumericError("empty artifact " + path);
    Mat m((int)rows.size(), (int)rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < rows[i].size(); ++c)
            m((int)i, (int)c) = rows[i][c];
    return m;
}

std::vector<double> read_column_csv(const std::string& path) {
    const Mat m = read_points_csv(path);
    std::vector<double> v((std::size_t)m.rows);
    for (int i = 0; i < m.rows; ++i) v[(std::size_t)i] = m(i, 0);
    return v;
}

std::unique_ptr<ResidualSampler> make_sampler(const Config& cfg, const SdeSpec& spec,
                                              double t_min) {
    const Benchmark b = cfg.benchmark_id();
    if (benchmark_has_exact_marginal(b)) {
        TimeSampling ts = cfg.time_sampling == "grid" ? TimeSampling::Grid
                                                      : TimeSampling::Continuous;
        std::vector<double> times = cfg.grid_times;
        // the complicated benchmark precomputes per-time covariance roots
        if (b == Benchmark::Complicated) ts = TimeSampling::Grid;
        if (ts == TimeSampling::Grid && times.empty()) {
            for (int i = 1; i <= 10; ++i)
                times.push_back(spec.horizon * (double)i / 10.0);
        }
        return std::make_unique<ExactMarginalSampler>(b, spec, t_min, ts, times);
    }
    // simulate-backed pool recorded at interior deciles
    const TimeGrid grid = TimeGrid::uniform(spec.horizon, cfg.grid_steps);
    std::vector<long> rec;
    for (int i = 1; i <= 10; ++i)
        rec.push_back((long)std::llround((double)cfg.grid_steps * i / 10.0));
    rec.erase(std::unique(rec.begin(), rec.end()), rec.end());
    const Scheme scheme =
        cfg.scheme == "implicit" ? Scheme::Implicit : Scheme::Forward;
    auto pool = simulate(spec, scheme, grid, cfg.pool_trajectories,
                         mix64(cfg.seed ^ 0x706f6f6cull), &rec);
    return std::make_unique<PoolSampler>(std::move(pool));
}

long resolve_batch(long batch, bool continuous) {
    if (batch > 0) return batch;
    return continuous ? 10000 : 1000;
}

std::string fmt_err(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3E", v);
    return buf;
}

const char* RESULTS_HEADER =
    "method,benchmark,dimension,alpha,seed,time_s,ll_rel_l2,ll_rel_linf,pdf_rel_l2,pdf_rel_linf";

} // namespace

Config Config::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str(), path);
}

Config Config::from_text(const std::string& text, const std::string& origin) {
    const RawConfig raw = parse_raw(text, origin);
    const Reader r(raw, origin);
    Config c;
    c.name = r.str("", "name", "run");
    c.benchmark = r.str("", "benchmark", "ou");
    c.dimension = (int)r.integer("", "dimension", 10);
    c.alpha = r.num("", "alpha", 1.95);
    c.seed = (std::uint64_t)r.integer("", "seed", 1);
    c.scheme = r.str("", "scheme", "forward");
    c.route = r.str("", "route", "fsm");
    c.workers = (int)r.integer("", "workers", 0);
    c.initial = r.str("", "initial", "");

    c.grid_steps = r.integer("grid", "steps", 500);
    c.horizon = r.num("grid", "horizon", -1.0);
    c.record = r.str("grid", "record", "decile");

    c.score_plan = read_plan(r, "score", 20000, mix64(c.seed * 4 + 1));
    c.score_width = (int)r.integer("score", "width", 128);
    c.score_hidden = (int)r.integer("score", "hidden", 3);
    c.time_sampling = r.str("score", "time_sampling", "continuous");
    c.grid_times = r.list("score", "grid_times");

    c.s2_plan = read_plan(r, "s2", 20000, mix64(c.seed * 4 + 2));

    c.ll_plan = read_plan(r, "ll", 8000, mix64(c.seed * 4 + 3));
    c.ll_width = (int)r.integer("ll", "width", 128);
    c.ll_hidden = (int)r.integer("ll", "hidden", 3);
    c.constraint = r.str("ll", "constraint", "auto");

    c.pool_trajectories = r.integer("pool", "trajectories", 20000);

    c.oracle = r.str("oracle", "kind", "mc");
    c.n_mc = r.integer("oracle", "n_mc", 1000000);
    c.oracle_samples = r.integer("oracle", "samples", 1000000);
    c.test_points = r.integer("oracle", "test_points", 2000);
    c.drop_fraction = r.num("oracle", "drop_fraction", 0.1);
    c.eval_time = r.num("oracle", "eval_time", -1.0);

    c.gate_ll_rel_l2 = r.num("eval", "gate_ll_rel_l2", 0.0);
    c.out_dir = r.str("output", "dir", "out");

    // validation beyond types
    benchmark_from_string(c.benchmark);
    if (c.route != "fsm" && c.route != "mixed-fsm" && c.route != "score-fpinn" &&
        c.route != "none")
        throw ConfigError("route must be fsm | mixed-fsm | score-fpinn | none, got '" +
                          c.route + "'");
    if (c.scheme != "forward" && c.scheme != "implicit")
        throw ConfigError("scheme must be forward | implicit, got '" + c.scheme + "'");
    if (c.oracle != "mc" && c.oracle != "radial-kde" && c.oracle != "exact")
        throw ConfigError("oracle.kind must be mc | radial-kde | exact, got '" +
                          c.oracle + "'");
    if (c.record != "terminal" && c.record != "decile" && c.record != "all")
        throw ConfigError("grid.record must be terminal | decile | all");
    if (c.time_sampling != "continuous" && c.time_sampling != "grid")
        throw ConfigError("score.time_sampling must be continuous | grid");
    if (c.constraint != "auto" && c.constraint != "hard" && c.constraint != "soft")
        throw ConfigError("ll.constraint must be auto | hard | soft");
    if (!c.initial.empty() && c.initial != "gaussian" && c.initial != "anisotropic" &&
        c.initial != "laplacian" && c.initial != "mixture" && c.initial != "point-mass")
        throw ConfigError("initial override must be gaussian | anisotropic | "
                          "laplacian | mixture | point-mass");
    if (c.dimension < 1) throw ConfigError("dimension must be >= 1");
    if (!(c.alpha > 0.0) || c.alpha > 2.0) throw ConfigError("alpha must be in (0, 2]");
    if (c.drop_fraction < 0.0 || c.drop_fraction >= 1.0)
        throw ConfigError("oracle.drop_fraction must be in [0, 1)");
    return c;
}

std::string Config::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "name=" << name << "\nbenchmark=" << benchmark << "\ndimension=" << dimension
       << "\nalpha=" << alpha << "\nseed=" << seed << "\nscheme=" << scheme
       << "\nroute=" << route << "\ninitial=" << initial
       << "\ngrid.steps=" << grid_steps << "\ngrid.horizon=" << horizon
       << "\ngrid.record=" << record;
    auto plan = [&os](const char* sec, const TrainPlan& p) {
        os << "\n" << sec << ".epochs=" << p.epochs << "\n" << sec
           << ".batch=" << p.batch_size << "\n" << sec << ".lr=" << p.lr0 << "\n"
           << sec << ".decay_rate=" << p.decay_rate << "\n" << sec
           << ".decay_interval=" << p.decay_interval << "\n" << sec
           << ".beta=" << p.smooth_l1_beta << "\n" << sec
           << ".lambda_initial=" << p.lambda_initial << "\n" << sec
           << ".lambda_residual=" << p.lambda_residual << "\n" << sec
           << ".t_min=" << p.t_min << "\n" << sec << ".seed=" << p.seed;
    };
    plan("score", score_plan);
    plan("s2", s2_plan);
    plan("ll", ll_plan);
    os << "\nscore.width=" << score_width << "\nscore.hidden=" << score_hidden
       << "\nscore.time_sampling=" << time_sampling << "\nscore.grid_times=";
    for (std::size_t i = 0; i < grid_times.size(); ++i)
        os << (i ? "," : "") << grid_times[i];
    os << "\nll.width=" << ll_width << "\nll.hidden=" << ll_hidden
       << "\nll.constraint=" << constraint << "\npool.trajectories=" << pool_trajectories
       << "\noracle.kind=" << oracle << "\noracle.n_mc=" << n_mc
       << "\noracle.samples=" << oracle_samples << "\noracle.test_points=" << test_points
       << "\noracle.drop_fraction=" << drop_fraction << "\noracle.eval_time=" << eval_time
       << "\neval.gate_ll_rel_l2=" << gate_ll_rel_l2 << "\n";
    return os.str();
}

std::uint64_t Config::hash() const {
    const std::string s = canonical();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

Benchmark Config::benchmark_id() const { return benchmark_from_string(benchmark); }

SdeSpec Config::make_spec() const {
    std::optional<InitialKind> kind;
    if (initial == "gaussian") kind = InitialKind::UnitGaussian;
    else if (initial == "anisotropic") kind = InitialKind::AnisotropicGaussian;
    else if (initial == "laplacian") kind = InitialKind::UnitLaplacian;
    else if (initial == "mixture") kind = InitialKind::GaussLaplaceMixture;
    else if (initial == "point-mass") kind = InitialKind::PointMassZero;
    SdeSpec spec = make_benchmark(benchmark_id(), dimension, alpha, seed, kind);
    if (horizon > 0.0) spec.horizon = horizon;
    return spec;
}

double Config::resolved_horizon() const { return make_spec().horizon; }

double Config::resolved_eval_time() const {
    return eval_time > 0.0 ? eval_time : resolved_horizon();
}

std::string config_schema_text() {
    std::ostringstream os;
    os << "configuration keys (key = default  # description)\n";
    std::string last_sec = "\x01";
    for (const auto& [sec, key, dflt, help] : schema()) {
        if (sec != last_sec) {
            os << (sec.empty() ? "\n# root\n" : "\n[" + sec + "]\n");
            last_sec = sec;
        }
        os << key << " = " << dflt << "  # " << help << "\n";
    }
    return os.str();
}

std::string run_dir(const Config& cfg) { return cfg.out_dir + "/" + cfg.name; }

void stage_sample_stable(const Config& cfg) {
    StageTimer timer;
    const std::string dir = run_dir(cfg);
    ensure_dir(dir);
    const StableLaw law(cfg.alpha, 1.0);
    const long n = std::min<long>(cfg.oracle_samples, 1000000);
    const Mat x = sample_isotropic_stable(law, cfg.dimension, n, mix64(cfg.seed * 4));
    write_points_csv(dir + "/stable_samples.csv", x);
    update_manifest(cfg, "sample-stable",
                    {{"wall_s", timer.seconds()}, {"n", n}, {"alpha", cfg.alpha}});
}

void stage_simulate(const Config& cfg) {
    StageTimer timer;
    const std::string dir = run_dir(cfg);
    ensure_dir(dir);
    const SdeSpec spec = cfg.make_spec();
    const TimeGrid grid = TimeGrid::uniform(spec.horizon, cfg.grid_steps);
    std::vector<long> rec;
    if (cfg.record == "terminal") {
        rec = {cfg.grid_steps};
    } else if (cfg.record == "decile") {
        rec.push_back(0);
        for (int i = 1; i <= 10; ++i)
            rec.push_back((long)std::llround((double)cfg.grid_steps * i / 10.0));
        rec.erase(std::unique(rec.begin(), rec.end()), rec.end());
    } else {
        for (long j = 0; j <= cfg.grid_steps; ++j) rec.push_back(j);
    }
    const Scheme scheme =
        cfg.scheme == "implicit" ? Scheme::Implicit : Scheme::Forward;
    const auto batches = simulate(spec, scheme, grid, cfg.pool_trajectories,
                                  mix64(cfg.seed ^ 0x73696dull), &rec);
    write_batch_dump(dir + "/trajectories.txt", cfg.benchmark, spec, cfg.scheme, grid,
                     cfg.seed, batches);
    update_manifest(cfg, "simulate",
                    {{"wall_s", timer.seconds()},
                     {"trajectories", cfg.pool_trajectories},
                     {"steps", cfg.grid_steps},
                     {"scheme", cfg.scheme}});
}

void stage_train_score(const Config& cfg) {
    StageTimer timer;
    const std::string dir = run_dir(cfg);
    ensure_dir(dir);
    if (cfg.route == "none") {
        update_manifest(cfg, "train-score", {{"wall_s", 0.0}, {"skipped", true}});
        return;
    }
    const SdeSpec spec = cfg.make_spec();
    if (!spec.has_levy())
        throw ConfigError("route '" + cfg.route +
                          "' needs a Levy component; use route = none when sigma = 0");

    ScoreTrainTask task;
    task.benchmark = cfg.benchmark_id();
    task.spec = spec;
    task.route = score_route_from_string(cfg.route);
    task.hidden.assign((std::size_t)cfg.score_hidden, cfg.score_width);
    task.plan = cfg.score_plan;
    task.s2_plan = cfg.s2_plan;
    const bool continuous = cfg.time_sampling == "continuous";
    task.s2_plan.batch_size = resolve_batch(
        task.s2_plan.batch_size != 0 ? task.s2_plan.batch_size
                                     : cfg.score_plan.batch_size,
        continuous);
    task.plan.batch_size = resolve_batch(task.plan.batch_size, continuous);
    task.time_sampling = cfg.time_sampling == "grid" ? TimeSampling::Grid
                                                     : TimeSampling::Continuous;
    task.grid_times = cfg.grid_times;

    const auto sampler = make_sampler(cfg, spec, task.plan.t_min);
    const auto result = train_score(task, *sampler);
    if (result.aborted_epoch >= 0)
        throw TrainingError("train-score aborted on non-finite loss",
                            result.aborted_epoch);

    save_checkpoint(dir + "/score.ckpt", result.salpha, plan_fingerprint(task.plan));
    write_train_log(dir + "/train_score.log.csv", result.log);
    if (result.s2) {
        save_checkpoint(dir + "/s2.ckpt", *result.s2, plan_fingerprint(task.s2_plan));
        write_train_log(dir + "/train_s2.log.csv", result.s2_log);
    }
    update_manifest(cfg, "train-score",
                    {{"wall_s", timer.seconds()},
                     {"route", cfg.route},
                     {"epochs", task.plan.epochs},
                     {"batch", task.plan.batch_size}});
}

void stage_solve_ll(const Config& cfg) {
    StageTimer timer;
    const std::string dir = run_dir(cfg);
    ensure_dir(dir);
    const SdeSpec spec = cfg.make_spec();

    std::optional<Mlp> salpha;
    if (spec.has_levy()) {
        const std::string path = dir + "/score.ckpt";
        if (!fs::exists(path))
            throw ConfigError("missing " + path + "; run train-score first");
        salpha = load_checkpoint(path);
    }

    const bool hard = cfg.constraint == "hard" ||
                      (cfg.constraint == "auto" && spec.initial.has_score());
    LlModel model = make_ll_model(
        spec.initial, std::vector<int>((std::size_t)cfg.ll_hidden, cfg.ll_width),
        cfg.ll_plan.seed, hard);
    TrainPlan plan = cfg.ll_plan;
    plan.batch_size = resolve_batch(plan.batch_size, cfg.time_sampling == "continuous");

    const auto sampler = make_sampler(cfg, spec, plan.t_min);
    const auto result =
        train_ll(model, salpha ? &*salpha : nullptr, spec, plan, *sampler);
    if (result.aborted_epoch >= 0)
        throw TrainingError("solve-ll aborted on non-finite loss", result.aborted_epoch);

    save_checkpoint(dir + "/ll.ckpt", model.core, plan_fingerprint(plan));
    write_train_log(dir + "/train_ll.log.csv", result.log);
    update_manifest(cfg, "solve-ll",
                    {{"wall_s", timer.seconds()},
                     {"epochs", plan.epochs},
                     {"batch", plan.batch_size},
                     {"constraint", hard ? "hard" : "soft"}});
}

void stage_make_reference(const Config& cfg) {
    StageTimer timer;
    const std::string dir = run_dir(cfg);
    ensure_dir(dir);
    const SdeSpec spec = cfg.make_spec();
    const Benchmark b = cfg.benchmark_id();
    const double te = cfg.resolved_eval_time();

    // test points from the law itself
    Mat pts;
    if (benchmark_has_exact_marginal(b)) {
        pts = exact_marginal(b, spec, te, cfg.test_points, mix64(cfg.seed * 4 + 11))
                  .points;
    } else {
        if (std::fabs(te - spec.horizon) > 1e-12)
            throw ConfigError(
                "simulate-backed benchmarks evaluate at the horizon; set "
                "oracle.eval_time = -1");
        const TimeGrid grid = TimeGrid::uniform(spec.horizon, cfg.grid_steps);
        std::vector<long> rec{cfg.grid_steps};
        const Scheme scheme =
            cfg.scheme == "implicit" ? Scheme::Implicit : Scheme::Forward;
        pts = simulate(spec, scheme, grid, cfg.test_points,
                       mix64(cfg.seed * 4 + 11), &rec)[0]
                  .points;
    }

    std::vector<double> ref;
    if (cfg.oracle == "mc") {
        if (!benchmark_has_exact_marginal(b))
            throw ConfigError("oracle.kind = mc needs a decomposable law; use "
                              "radial-kde for this benchmark");
        long underflow = 0;
        ref = mc_ll_oracle(b, spec, te, pts, cfg.n_mc, mix64(cfg.seed * 4 + 12),
                           &underflow);
        if (underflow > 0)
            throw NumericError("mc oracle underflow at " + std::to_string(underflow) +
                               " test points");
    } else if (cfg.oracle == "radial-kde") {
        Mat samples;
        if (benchmark_has_exact_marginal(b)) {
            samples = exact_marginal(b, spec, te, cfg.oracle_samples,
                                     mix64(cfg.seed * 4 + 13))
                          .points;
        } else {
            const TimeGrid grid = TimeGrid::uniform(spec.horizon, cfg.grid_steps);
            std::vector<long> rec{cfg.grid_steps};
            const Scheme scheme =
                cfg.scheme == "implicit" ? Scheme::Implicit : Scheme::Forward;
            samples = simulate(spec, scheme, grid, cfg.oracle_samples,
                               mix64(cfg.seed * 4 + 13), &rec)[0]
                          .points;
        }
        ref = radial_kde_ll(samples, pts).ll;
    } else {
        ref = exact_ll(b, spec, te, pts);
    }

    write_points_csv(dir + "/testpoints.csv", pts);
    Mat refm((int)ref.size(), 1);
    for (std::size_t i = 0; i < ref.size(); ++i) refm((int)i, 0) = ref[i];
    write_points_csv(dir + "/reference.csv", refm);
    update_manifest(cfg, "make-reference",
                    {{"wall_s", timer.seconds()},
                     {"oracle", cfg.oracle},
                     {"eval_time", te},
                     {"test_points", cfg.test_points}});
}

EvalReport stage_evaluate(const Config& cfg, bool* gate_failed) {
    StageTimer timer;
    const std::string dir = run_dir(cfg);
    ensure_dir(dir);
    const SdeSpec spec = cfg.make_spec();
    const double te = cfg.resolved_eval_time();

    const std::string ll_path = dir + "/ll.ckpt";
    if (!fs::exists(ll_path))
        throw ConfigError("missing " + ll_path + "; run solve-ll first");
    const Mat pts = read_points_csv(dir + "/testpoints.csv");
    const auto ref = read_column_csv(dir + "/reference.csv");

    const bool hard = cfg.constraint == "hard" ||
                      (cfg.constraint == "auto" && spec.initial.has_score());
    LlModel model;
    model.core = load_checkpoint(ll_path);
    model.hard = hard;
    model.initial = spec.initial;

    Mat X(pts.rows, pts.cols + 1);
    for (int i = 0; i < pts.rows; ++i) {
        for (int c = 0; c < pts.cols; ++c) X(i, c) = pts(i, c);
        X(i, pts.cols) = te;
    }
    const auto pred = evaluate_ll_batch(model, X);

    ReportMeta meta{cfg.benchmark, cfg.dimension, cfg.alpha, cfg.seed};
    const EvalReport rep = make_report(pred, ref, cfg.drop_fraction, meta);

    // accumulate pipeline wall time from the manifest
    double total_wall = timer.seconds();
    const json manifest = load_manifest(dir);
    if (manifest.contains("stages"))
        for (const auto& [k, v] : manifest["stages"].items())
            if (v.contains("wall_s")) total_wall += v["wall_s"].get<double>();

    const std::string row_path = dir + "/results.csv";
    const bool fresh = !fs::exists(row_path);
    std::ofstream f(row_path, std::ios::app);
    if (fresh) f << RESULTS_HEADER << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", total_wall);
    f << cfg.route << "," << cfg.benchmark << "," << cfg.dimension << "," << cfg.alpha
      << "," << cfg.seed << "," << buf << "," << fmt_err(rep.ll_rel_l2) << ","
      << fmt_err(rep.ll_rel_linf) << "," << fmt_err(rep.pdf_rel_l2) << ","
      << fmt_err(rep.pdf_rel_linf) << "\n";

    update_manifest(cfg, "evaluate",
                    {{"wall_s", timer.seconds()},
                     {"ll_rel_l2", rep.ll_rel_l2},
                     {"ll_rel_linf", rep.ll_rel_linf},
                     {"pdf_rel_l2", rep.pdf_rel_l2},
                     {"pdf_rel_linf", rep.pdf_rel_linf},
                     {"kept", rep.n_test_kept},
                     {"dropped", rep.n_test_dropped}});

    const bool breach = cfg.gate_ll_rel_l2 > 0.0 && rep.ll_rel_l2 > cfg.gate_ll_rel_l2;
    if (gate_failed) *gate_failed = breach;
    return rep;
}

EvalReport stage_full(const Config& cfg, bool* gate_failed) {
    stage_train_score(cfg);
    stage_solve_ll(cfg);
    stage_make_reference(cfg);
    return stage_evaluate(cfg, gate_failed);
}

void results_table(const std::vector<std::string>& row_files,
                   const std::string& out_path) {
    if (row_files.empty()) throw ConfigError("results_table: no input files");
    struct Row {
        std::string method;
        long dimension;
        double alpha;
        std::string time_s, l2, linf, pl2, plinf;
    };
    std::vector<Row> rows;
    for (const auto& file : row_files) {
        std::ifstream f(file);
        if (!f) throw ConfigError("results_table: cannot open " + file);
        std::string header;
        std::getline(f, header);
        if (trim(header) != RESULTS_HEADER)
            throw ConfigError("results_table: schema mismatch in " + file);
        std::string line;
        while (std::getline(f, line)) {
            if (trim(line).empty()) continue;
            std::vector<std::string> cols;
            std::istringstream is(line);
            std::string tok;
            while (std::getline(is, tok, ',')) cols.push_back(tok);
            if (cols.size() != 10)
                throw ConfigError("results_table: malformed row in " + file);
            rows.push_back({cols[0], std::stol(cols[2]), std::stod(cols[3]), cols[5],
                            cols[6], cols[7], cols[8], cols[9]});
        }
    }
    if (rows.empty()) throw ConfigError("results_table: no data rows found");
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.method != b.method) return a.method < b.method;
        if (a.dimension != b.dimension) return a.dimension < b.dimension;
        return a.alpha < b.alpha;
    });
    std::ofstream out(out_path, std::ios::trunc);
    out << "method,dimension,alpha,time,ll_rel_l2,ll_rel_linf,pdf_rel_l2,pdf_rel_linf\n";
    for (const auto& r : rows)
        out << r.method << "," << r.dimension << "," << r.alpha << "," << r.time_s
            << "," << r.l2 << "," << r.linf << "," << r.pl2 << "," << r.plinf << "\n";
}

} // namespace fsde
