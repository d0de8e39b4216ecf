#pragma once

#include <vector>

#include "fsde/mat.hpp"
#include "fsde/rng.hpp"

namespace fsde {

// Symmetric alpha-stable law S_alpha_S^d(gamma): characteristic function
// exp(-gamma^alpha * ||k||^alpha). alpha = 2 is N(0, 2 gamma^2 I).
struct StableLaw {
    double alpha;
    double gamma;

    StableLaw(double a, double g);

    // Scale of the positive subordinator A ~ S(alpha/2, 1, c, 0) with
    // X = sqrt(A) * G isotropic stable; cached at construction.
    double subordinator_scale() const { return sub_scale_; }

private:
    double sub_scale_;
};

// General 1D stable S(alpha, beta, gamma, mu) in the parameterization with
// characteristic function exp(i t mu - |gamma t|^alpha (1 - i beta sgn(t) Phi)).
// Only the totally skewed positive branch is used internally (subordinator);
// the full form is exposed for tests.
struct SkewedStableParams {
    double alpha;
    double beta_skew;
    double gamma;
    double mu;

    SkewedStableParams(double a, double b, double g, double m);
};

// One draw given an Rng positioned where the caller wants it.
double draw_skewed_stable(const SkewedStableParams& p, Rng& rng);

// n i.i.d. draws, deterministic in (seed); row i uses counter block i.
std::vector<double> sample_skewed_stable(const SkewedStableParams& p, long n,
                                         std::uint64_t seed);

// One isotropic draw of dimension d written to out[0..d).
void draw_isotropic_stable(const StableLaw& law, int d, Rng& rng, double* out);

// n x d matrix of i.i.d. isotropic stable rows; row i uses counter block i
// of the (seed, stream) Rng, so parallel generation is order-independent.
Mat sample_isotropic_stable(const StableLaw& law, int d, long n,
                            std::uint64_t seed, std::uint64_t stream = 0);

// Fractional score of an isotropic stable law: -x / (alpha gamma^alpha).
std::vector<double> fractional_score_of_stable(const StableLaw& law,
                                               const std::vector<double>& x);

// Vanilla Gaussian score -Sigma^{-1}(x - mu).
std::vector<double> gaussian_score(const std::vector<double>& mu,
                                   const Mat& sigma,
                                   const std::vector<double>& x);

struct QuadratureConfig {
    int points_per_panel = 16;   // Gauss-Legendre nodes per panel
    double tail_exponent = 45.0; // integrate until gamma^a k^a >= this
    long max_panels = 400000;
    double rel_tol = 1e-9;       // agreement between refinement levels
    double abs_tol = 1e-13;      // cancellation floor of the oscillatory sum
};

// log p(x) of the 1D symmetric stable law via Fourier inversion
//   p(x) = (1/pi) * int_0^inf cos(kx) exp(-gamma^alpha k^alpha) dk.
// Closed forms are dispatched for alpha = 2 (the oscillatory integral cannot
// deliver 6 significant digits of the log at |x| ~ 20 gamma there).
double sas_log_density_1d(const StableLaw& law, double x,
                          const QuadratureConfig& cfg = {});

// log density of the d-dimensional isotropic Cauchy (alpha = 1),
//   p(x) = Gamma((1+d)/2) / (Gamma(1/2) (gamma^2 pi)^{d/2} (1+||x||^2/gamma^2)^{(d+1)/2}).
double cauchy_log_density(int d, double gamma, double r2);

} // namespace fsde
