#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fsde/mat.hpp"
#include "fsde/rng.hpp"
#include "fsde/stable.hpp"

namespace fsde {

// Closed drift catalog; Jacobians and divergences are analytic per tag.
enum class DriftTag { Zero, Linear, LinearOverAlpha, TanhRadial, Polynomial };
// Diffusion catalog; every entry is x-independent, so div(G G^T) = 0.
enum class DiffusionTag { Zero, Identity, BPlusTI };

enum class InitialKind {
    AnisotropicGaussian, // diag(lambda), lambda_{2i} ~ U[1,2], lambda_{2i+1} = 1/lambda_{2i}
    UnitGaussian,
    UnitLaplacian,       // independent Lap(1) coordinates
    GaussLaplaceMixture, // equal-weight mix of the two unit kinds
    PointMassZero,       // degenerate start at the origin (pure Levy tests)
};

std::vector<double> lambda_pattern(int d, std::uint64_t seed);

struct InitialDistribution {
    InitialKind kind = InitialKind::UnitGaussian;
    int d = 1;
    std::vector<double> lambdas; // anisotropic variances

    static InitialDistribution unit_gaussian(int d);
    static InitialDistribution anisotropic(int d, std::uint64_t seed);
    static InitialDistribution unit_laplacian(int d);
    static InitialDistribution mixture(int d);
    static InitialDistribution point_mass_zero(int d);

    void sample(Rng& rng, double* out) const;
    double log_density(const double* x) const;
    // exact score; only the Gaussian kinds have one
    std::vector<double> score(const double* x) const;
    bool has_score() const;
    bool has_density() const;
    Mat covariance() const;     // Gaussian kinds
    Mat inv_covariance() const; // Gaussian kinds
};

struct TimeGrid {
    std::vector<double> t; // 0 = t_0 < ... < t_N = T

    static TimeGrid uniform(double T, long steps);
    long steps() const { return (long)t.size() - 1; }
    double dt(long j) const { return t[(std::size_t)j + 1] - t[(std::size_t)j]; }
    void validate() const;
};

struct SampleBatch {
    double t = 0.0;
    Mat points; // n x d
    std::string provenance;
    std::uint64_t seed = 0;
};

struct SdeSpec {
    int d = 1;
    DriftTag drift = DriftTag::Zero;
    DiffusionTag diffusion = DiffusionTag::Zero;
    Mat B; // BPlusTI only
    double levy_sigma = 1.0;
    double levy_alpha = 1.95;
    double horizon = 1.0;
    InitialDistribution initial;

    void drift_eval(const double* x, double t, double* out) const;
    Mat drift_jacobian(const double* x, double t) const;
    double drift_divergence(const double* x, double t) const;
    void drift_divergence_gradient(const double* x, double t, double* out) const;
    Mat diffusion_matrix(double t) const; // G(t)
    Mat ggt(double t) const;              // G G^T
    bool has_brownian() const { return diffusion != DiffusionTag::Zero; }
    bool has_levy() const { return levy_sigma > 0.0; }
};

// One forward Euler-Maruyama step; draws z then L from the rng.
void forward_em_step(const SdeSpec& spec, const double* x, double t, double dt,
                     Rng& rng, double* out);

struct NewtonConfig {
    double tol = 1e-10;
    int max_iters = 50;
    int fixed_point_iters = 400;
    double damping = 0.5;
};

// Drift-implicit step solving y = x + f(y, t+dt) dt + noise. The noise uses
// the same draws in the same order as a forward step, so paired comparisons
// share randomness. Newton first, damped fixed point as fallback.
void implicit_em_step(const SdeSpec& spec, const double* x, double t, double dt,
                      Rng& rng, const NewtonConfig& cfg, double* out);

enum class Scheme { Forward, Implicit };

// n independent trajectories; per-trajectory rng streams keyed by index, so
// results are reproducible for any thread count. Batches are recorded at
// grid indices in `record` (default: every grid time).
std::vector<SampleBatch> simulate(const SdeSpec& spec, Scheme scheme,
                                  const TimeGrid& grid, long n, std::uint64_t seed,
                                  const std::vector<long>* record = nullptr,
                                  const NewtonConfig& cfg = {});

// --- benchmarks ------------------------------------------------------------

enum class Benchmark { PureLevy, Basic, Complicated, OuLevy, TanhDrift, Polynomial, Heat1d };

Benchmark benchmark_from_string(const std::string& s);
std::string benchmark_name(Benchmark b);

// Assembled SDE for a named benchmark. The seed drives the anisotropy
// pattern and the B matrix. Initial kind is overridable.
SdeSpec make_benchmark(Benchmark b, int d, double alpha, std::uint64_t seed,
                       std::optional<InitialKind> initial = {});

bool benchmark_has_exact_marginal(Benchmark b);

// Exact marginal sample, decomposed as x = shift + gaussian + levy. The
// shift carries the (possibly transformed) initial draw.
struct MarginalParts {
    Mat shift;    // n x d
    Mat gaussian; // n x d (zero when no Brownian part)
    Mat levy;     // n x d (zero when no Levy part)
    double gamma_t = 0.0; // scale of the Levy part
};

MarginalParts exact_marginal_parts(Benchmark b, const SdeSpec& spec, double t,
                                   long n, std::uint64_t seed,
                                   std::uint64_t stream = 0);
SampleBatch exact_marginal(Benchmark b, const SdeSpec& spec, double t, long n,
                           std::uint64_t seed);

// Sigma_t of the complicated benchmark: (1 + t^3/3) I + t B B^T + (t^2/2)(B + B^T),
// with its symmetric square root via eigendecomposition. Eigenvalues below
// -1e-12 are an error; those in [-1e-12, 0] clamp to zero.
void sigma_t_matrix(const Mat& B, double t, Mat& sigma, Mat& sqrt_sigma);

// Covariance of the Brownian integral alone (no initial condition):
// t B B^T + (t^2/2)(B + B^T) + (t^3/3) I.
Mat brownian_integral_cov(const Mat& B, double t);

// Random B = Q Gamma: Q orthogonal from seeded QR, Gamma the lambda pattern.
Mat make_b_matrix(int d, std::uint64_t seed);

// --- trajectory dump (stable columnar text format) --------------------------

void write_batch_dump(const std::string& path, const std::string& benchmark,
                      const SdeSpec& spec, const std::string& scheme,
                      const TimeGrid& grid, std::uint64_t seed,
                      const std::vector<SampleBatch>& batches);
std::vector<SampleBatch> read_batch_dump(const std::string& path);

} // namespace fsde
