#include "fsde/stable.hpp"

#include <cmath>

#include "fsde/common.hpp"
#include "fsde/kernels.hpp"

namespace fsde {

namespace {
constexpr double PI = 3.14159265358979323846264338327950288;
constexpr double ALPHA_ONE_EPS = 1e-9; // branch to the alpha=1 formula inside this window
} // namespace

StableLaw::StableLaw(double a, double g) : alpha(a), gamma(g) {
    if (!(alpha > 0.0) || alpha > 2.0)
        throw ConfigError("StableLaw: alpha must be in (0,2], got " + std::to_string(a));
    if (!(gamma > 0.0))
        throw ConfigError("StableLaw: gamma must be > 0, got " + std::to_string(g));
    // A ~ S(alpha/2, 1, 2 gamma^2 cos(pi alpha/4)^{2/alpha}, 0)
    sub_scale_ = 2.0 * gamma * gamma *
                 std::pow(std::cos(PI * alpha / 4.0), 2.0 / alpha);
}

SkewedStableParams::SkewedStableParams(double a, double b, double g, double m)
    : alpha(a), beta_skew(b), gamma(g), mu(m) {
    if (!(alpha > 0.0) || alpha > 2.0)
        throw ConfigError("SkewedStableParams: alpha must be in (0,2]");
    if (beta_skew < -1.0 || beta_skew > 1.0)
        throw ConfigError("SkewedStableParams: beta must be in [-1,1]");
    if (!(gamma > 0.0)) throw ConfigError("SkewedStableParams: gamma must be > 0");
    if (!std::isfinite(mu)) throw ConfigError("SkewedStableParams: mu not finite");
}

double draw_skewed_stable(const SkewedStableParams& p, Rng& rng) {
    const double theta = rng.uniform(-PI / 2.0, PI / 2.0);
    const double w = rng.exponential();
    const double a = p.alpha;
    const double b = p.beta_skew;

    if (std::fabs(a - 1.0) < ALPHA_ONE_EPS) {
        // alpha = 1 uses the log branch of Phi; no tan(pi a/2) blow-up
        const double h = PI / 2.0 + b * theta;
        const double x = (2.0 / PI) *
                         (h * std::tan(theta) -
                          b * std::log((PI / 2.0) * w * std::cos(theta) / h));
        return p.gamma * x + (2.0 / PI) * b * p.gamma * std::log(p.gamma) + p.mu;
    }

    const double tab = std::tan(PI * a / 2.0);
    const double B = std::atan(b * tab) / a;
    const double S = std::pow(1.0 + b * b * tab * tab, 1.0 / (2.0 * a));
    const double x = S * std::sin(a * (theta + B)) /
                     std::pow(std::cos(theta), 1.0 / a) *
                     std::pow(std::cos(theta - a * (theta + B)) / w, (1.0 - a) / a);
    return p.gamma * x + p.mu;
}

std::vector<double> sample_skewed_stable(const SkewedStableParams& p, long n,
                                         std::uint64_t seed) {
    if (n < 1) throw ConfigError("sample_skewed_stable: n must be >= 1");
    std::vector<double> out((std::size_t)n);
    const bool par = kernels::mode() == kernels::Mode::Parallel;
#pragma omp parallel for schedule(static) if (par && n > 4096)
    for (long i = 0; i < n; ++i) {
        Rng rng(seed, 0);
        rng.set_block((std::uint64_t)i);
        out[(std::size_t)i] = draw_skewed_stable(p, rng);
    }
    return out;
}

void draw_isotropic_stable(const StableLaw& law, int d, Rng& rng, double* out) {
    if (law.alpha == 2.0) {
        // subordinator degenerate: N(0, 2 gamma^2 I) directly
        const double s = law.gamma * std::sqrt(2.0);
        for (int j = 0; j < d; ++j) out[j] = s * rng.gauss();
        return;
    }
    const SkewedStableParams sub(law.alpha / 2.0, 1.0, law.subordinator_scale(), 0.0);
    const double a = std::sqrt(draw_skewed_stable(sub, rng));
    for (int j = 0; j < d; ++j) out[j] = a * rng.gauss();
}

Mat sample_isotropic_stable(const StableLaw& law, int d, long n,
                            std::uint64_t seed, std::uint64_t stream) {
    if (d < 1) throw ConfigError("sample_isotropic_stable: d must be >= 1");
    if (n < 1) throw ConfigError("sample_isotropic_stable: n must be >= 1");
    Mat out((int)n, d);
    const bool par = kernels::mode() == kernels::Mode::Parallel;
#pragma omp parallel for schedule(static) if (par && n > 1024)
    for (long i = 0; i < n; ++i) {
        Rng rng(seed, stream);
        rng.set_block((std::uint64_t)i);
        draw_isotropic_stable(law, d, rng, out.row((int)i));
    }
    return out;
}

std::vector<double> fractional_score_of_stable(const StableLaw& law,
                                               const std::vector<double>& x) {
    const double c = -1.0 / (law.alpha * std::pow(law.gamma, law.alpha));
    std::vector<double> s(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) s[i] = c * x[i];
    return s;
}

std::vector<double> gaussian_score(const std::vector<double>& mu,
                                   const Mat& sigma,
                                   const std::vector<double>& x) {
    const int d = (int)x.size();
    if (sigma.rows != d || sigma.cols != d || (int)mu.size() != d)
        throw ShapeError("gaussian_score: shape mismatch");
    std::vector<double> r(d);
    for (int i = 0; i < d; ++i) r[i] = x[i] - mu[i];
    auto y = solve_lu(sigma, std::move(r));
    for (double& v : y) v = -v;
    return y;
}

namespace {

// 16-point Gauss-Legendre nodes/weights on [-1,1]
const double GL_X[16] = {
    -0.9894009349916499, -0.9445750230732326, -0.8656312023878318,
    -0.7554044083550030, -0.6178762444026438, -0.4580167776572274,
    -0.2816035507792589, -0.0950125098376374, 0.0950125098376374,
    0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
    0.7554044083550030,  0.8656312023878318,  0.9445750230732326,
    0.9894009349916499};
const double GL_W[16] = {
    0.0271524594117541, 0.0622535239386479, 0.0951585116824928,
    0.1246289712555339, 0.1495959888165767, 0.1691565193950025,
    0.1826034150449236, 0.1894506104550685, 0.1894506104550685,
    0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479,
    0.0271524594117541};

double panel_gl16(double a, double z, double lo, double hi) {
    const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
    double s = 0.0;
    for (int i = 0; i < 16; ++i) {
        const double u = c + h * GL_X[i];
        s += GL_W[i] * std::cos(z * u) * std::exp(-std::pow(u, a));
    }
    return h * s;
}

// int_0^inf cos(z u) exp(-u^a) du with panels of at most half a period.
// exp(-u^a) has unbounded derivatives at u = 0 for non-integer a, so the
// first panel is refined dyadically toward the origin.
double inversion_integral(double a, double z, double umax, double panel_w,
                          const QuadratureConfig& cfg) {
    const long npanels = (long)std::ceil(umax / panel_w);
    if (npanels + 54 > cfg.max_panels)
        throw NumericError("sas_log_density_1d: panel budget exceeded (" +
                           std::to_string(npanels) + " needed)");
    double total = 0.0;
    const double first_hi = std::min(panel_w, umax);
    double edge = first_hi;
    for (int k = 0; k < 54; ++k) {
        const double lo = 0.5 * edge;
        total += panel_gl16(a, z, lo, edge);
        edge = lo;
    }
    // remaining [0, edge] has integrand <= 1 and length ~ 6e-17 * panel_w
    for (long p = 1; p < npanels; ++p) {
        const double lo = p * panel_w;
        const double hi = std::min(umax, lo + panel_w);
        total += panel_gl16(a, z, lo, hi);
    }
    return total;
}

} // namespace

double sas_log_density_1d(const StableLaw& law, double x,
                          const QuadratureConfig& cfg) {
    const double a = law.alpha;
    const double g = law.gamma;
    if (a == 2.0) {
        // N(0, 2 gamma^2)
        const double v = 2.0 * g * g;
        return -0.5 * std::log(2.0 * PI * v) - x * x / (2.0 * v);
    }
    if (cfg.points_per_panel != 16)
        throw ConfigError("sas_log_density_1d: only 16-pt panels supported");
    // standardize: p(x) = f(x/gamma)/gamma with f(z) = (1/pi) I(z)
    const double z = std::fabs(x) / g;
    const double umax = std::pow(cfg.tail_exponent, 1.0 / a);
    const double half_period = z > 1e-12 ? PI / z : umax;
    const double w0 = std::min(half_period, umax / 8.0);
    const double i0 = inversion_integral(a, z, umax, w0, cfg);
    const double i1 = inversion_integral(a, z, umax, w0 * 0.5, cfg);
    if (std::fabs(i1 - i0) > cfg.rel_tol * std::fabs(i1) + cfg.abs_tol)
        throw NumericError(
            "sas_log_density_1d: quadrature did not converge (alpha=" +
            std::to_string(a) + ", x/gamma=" + std::to_string(z) + ", delta=" +
            std::to_string(std::fabs(i1 - i0)) + ")");
    const double p = i1 / (PI * g);
    if (!(p > 0.0))
        throw NumericError("sas_log_density_1d: nonpositive density at x/gamma=" +
                           std::to_string(z));
    return std::log(p);
}

double cauchy_log_density(int d, double gamma, double r2) {
    return std::lgamma(0.5 * (1.0 + d)) - std::lgamma(0.5) -
           0.5 * d * std::log(gamma * gamma * PI) -
           0.5 * (d + 1.0) * std::log1p(r2 / (gamma * gamma));
}

} // namespace fsde
