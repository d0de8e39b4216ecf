#include "fsde/mlp.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "fsde/rng.hpp"

namespace fsde {

long Mlp::n_params() const {
    long n = 0;
    for (std::size_t l = 0; l < W.size(); ++l) n += (long)W[l].size() + (long)b[l].size();
    return n;
}

Mlp make_mlp(const std::vector<int>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw ConfigError("make_mlp: need at least input and output sizes");
    for (int s : sizes)
        if (s < 1) throw ConfigError("make_mlp: layer sizes must be positive");
    Mlp net;
    net.sizes = sizes;
    Rng rng(seed, 0x6d6c70);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int fi = sizes[l], fo = sizes[l + 1];
        Mat w(fi, fo);
        const double lim = std::sqrt(6.0 / (fi + fo));
        for (auto& v : w.a) v = rng.uniform(-lim, lim);
        net.W.push_back(std::move(w));
        net.b.emplace_back(1, fo); // zero biases
    }
    return net;
}

Mat mlp_forward(const Mlp& net, const Mat& X) {
    if (X.cols != net.in_dim()) throw ShapeError("mlp_forward: input width mismatch");
    Mat h = X;
    for (int l = 0; l < net.n_layers(); ++l) {
        Mat z = matmul(h, net.W[(std::size_t)l]);
        for (int r = 0; r < z.rows; ++r)
            for (int c = 0; c < z.cols; ++c) z(r, c) += net.b[(std::size_t)l](0, c);
        if (l + 1 < net.n_layers())
            for (auto& v : z.a) v = std::tanh(v);
        h = std::move(z);
    }
    return h;
}

MlpNodes mlp_params(Graph& g, const Mlp& net, bool trainable) {
    MlpNodes p;
    for (int l = 0; l < net.n_layers(); ++l) {
        p.W.push_back(g.leaf(net.W[(std::size_t)l], trainable));
        p.b.push_back(g.leaf(net.b[(std::size_t)l], trainable));
    }
    return p;
}

int mlp_emit(Graph& g, const Mlp& net, const MlpNodes& p, int x) {
    if (g.val(x).cols != net.in_dim()) throw ShapeError("mlp_emit: input width mismatch");
    int h = x;
    for (int l = 0; l < net.n_layers(); ++l) {
        int z = g.add_rowvec(g.matmul(h, p.W[(std::size_t)l]), p.b[(std::size_t)l]);
        h = (l + 1 < net.n_layers()) ? g.tanh_(z) : z;
    }
    return h;
}

void mlp_collect_grads(const Graph& g, const MlpNodes& p,
                       const std::vector<int>& grads_w,
                       const std::vector<int>& grads_b,
                       std::vector<Mat>& gW, std::vector<Mat>& gB) {
    gW.clear();
    gB.clear();
    for (std::size_t l = 0; l < p.W.size(); ++l) {
        gW.push_back(grads_w[l] >= 0 ? g.val(grads_w[l])
                                     : Mat(g.val(p.W[l]).rows, g.val(p.W[l]).cols));
        gB.push_back(grads_b[l] >= 0 ? g.val(grads_b[l])
                                     : Mat(1, g.val(p.b[l]).cols));
    }
}

MlpGrads mlp_backward(Graph& g, const MlpNodes& p, int loss) {
    std::vector<int> wrt;
    wrt.insert(wrt.end(), p.W.begin(), p.W.end());
    wrt.insert(wrt.end(), p.b.begin(), p.b.end());
    const auto grads = g.backward(loss, wrt);
    const std::size_t L = p.W.size();
    std::vector<int> gw(grads.begin(), grads.begin() + (long)L);
    std::vector<int> gb(grads.begin() + (long)L, grads.end());
    MlpGrads out;
    mlp_collect_grads(g, p, gw, gb, out.W, out.b);
    return out;
}

InputDerivs input_derivatives(const Mlp& net, const Mat& X, int spatial_d,
                              int order) {
    if (order != 1 && order != 2)
        throw CapabilityError("input_derivatives: order must be 1 or 2");
    const int n = X.rows;
    const int din = net.in_dim();
    const int dout = net.out_dim();
    if (spatial_d > din) throw ShapeError("input_derivatives: spatial_d > input width");

    InputDerivs out;
    Graph g;
    const int x = g.leaf(X, true);
    const auto p = mlp_params(g, net, false);
    const int y = mlp_emit(g, net, p, x);

    // one pass per output component: rows of the per-point Jacobians
    out.jac.assign((std::size_t)n, Mat(dout, din));
    std::vector<int> comp_grads(dout, -1);
    for (int j = 0; j < dout; ++j) {
        const int s = g.sum_all(g.slice_cols(y, j, j + 1));
        comp_grads[j] = g.backward(s, {x})[0];
        const Mat& gv = g.val(comp_grads[j]);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < din; ++c) out.jac[(std::size_t)i](j, c) = gv(i, c);
    }

    if (dout == spatial_d) {
        out.div.assign((std::size_t)n, 0.0);
        for (int j = 0; j < spatial_d; ++j) {
            const Mat& gv = g.val(comp_grads[j]);
            for (int i = 0; i < n; ++i) out.div[(std::size_t)i] += gv(i, j);
        }
    }

    if (order == 2) {
        if (dout == 1) {
            // Hessian of the scalar output: differentiate each gradient column
            out.hess.assign((std::size_t)n, Mat(din, din));
            const int gx = comp_grads[0];
            for (int c = 0; c < din; ++c) {
                const int s = g.sum_all(g.slice_cols(gx, c, c + 1));
                const int h = g.backward(s, {x})[0];
                if (h < 0) continue;
                const Mat& hv = g.val(h);
                for (int i = 0; i < n; ++i)
                    for (int c2 = 0; c2 < din; ++c2)
                        out.hess[(std::size_t)i](c, c2) = hv(i, c2);
            }
        } else if (dout == spatial_d) {
            // gradient of the divergence (nested second order)
            int div_node = -1;
            for (int j = 0; j < spatial_d; ++j) {
                const int dj = g.slice_cols(comp_grads[j], j, j + 1);
                div_node = div_node < 0 ? dj : g.add(div_node, dj);
            }
            const int s = g.sum_all(div_node);
            const int dg = g.backward(s, {x})[0];
            out.div_grad = dg >= 0 ? g.val(dg) : Mat(n, din);
        }
    }
    return out;
}

std::vector<double> divergence(const Mlp& net, const Mat& X, int d) {
    if (net.out_dim() != d)
        throw ShapeError("divergence: output width must equal spatial dimension");
    const auto derivs = input_derivatives(net, X, d, 1);
    return derivs.div;
}

void mlp_value_div(const Mlp& net, const Mat& X, int d, Mat& values,
                   std::vector<double>& div) {
    if (net.out_dim() != d) throw ShapeError("mlp_value_div: output width != d");
    if (X.cols != net.in_dim()) throw ShapeError("mlp_value_div: input width mismatch");
    const int n = X.rows;
    // forward tangents along e_0..e_{d-1}; tangent k lives in tan[k]
    Mat h = X;
    std::vector<Mat> tan((std::size_t)d);
    for (int k = 0; k < d; ++k) {
        tan[(std::size_t)k] = Mat(n, X.cols);
        for (int i = 0; i < n; ++i) tan[(std::size_t)k](i, k) = 1.0;
    }
    for (int l = 0; l < net.n_layers(); ++l) {
        const Mat& W = net.W[(std::size_t)l];
        const Mat& b = net.b[(std::size_t)l];
        Mat z = matmul(h, W);
        for (int r = 0; r < z.rows; ++r)
            for (int c = 0; c < z.cols; ++c) z(r, c) += b(0, c);
        std::vector<Mat> tz((std::size_t)d);
        for (int k = 0; k < d; ++k) tz[(std::size_t)k] = matmul(tan[(std::size_t)k], W);
        if (l + 1 < net.n_layers()) {
            Mat a = z;
            for (auto& v : a.a) v = std::tanh(v);
            for (int k = 0; k < d; ++k) {
                Mat& t = tz[(std::size_t)k];
                for (std::size_t i = 0; i < t.size(); ++i)
                    t.a[i] *= 1.0 - a.a[i] * a.a[i];
            }
            h = std::move(a);
        } else {
            h = std::move(z);
        }
        tan = std::move(tz);
    }
    values = std::move(h);
    div.assign((std::size_t)n, 0.0);
    for (int k = 0; k < d; ++k)
        for (int i = 0; i < n; ++i) div[(std::size_t)i] += tan[(std::size_t)k](i, k);
}

double smooth_l1(const std::vector<double>& pred,
                 const std::vector<double>& target, double beta) {
    if (pred.size() != target.size() || pred.empty())
        throw ShapeError("smooth_l1: size mismatch");
    if (beta < 0.0) throw ConfigError("smooth_l1: beta must be >= 0");
    const bool pure_l2 = !std::isfinite(beta);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - target[i];
        const double ae = std::fabs(e);
        s += (pure_l2 || ae < beta) ? e * e : 2.0 * beta * ae - beta * beta;
    }
    return s / (double)pred.size();
}

void TrainPlan::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("TrainPlan: lr0 must be > 0");
    if (!(decay_rate > 0.0) || decay_rate > 1.0)
        throw ConfigError("TrainPlan: decay_rate must be in (0,1]");
    if (batch_size < 1) throw ConfigError("TrainPlan: batch_size must be >= 1");
    if (decay_interval < 1) throw ConfigError("TrainPlan: decay_interval must be >= 1");
    if (smooth_l1_beta < 0.0) throw ConfigError("TrainPlan: smooth_l1_beta must be >= 0");
    if (lambda_initial < 0.0 || lambda_residual < 0.0)
        throw ConfigError("TrainPlan: loss weights must be nonnegative");
    if (!(t_min > 0.0)) throw ConfigError("TrainPlan: t_min must be > 0");
    if (epochs < 0) throw ConfigError("TrainPlan: epochs must be >= 0");
}

double plan_lr(const TrainPlan& plan, long epoch) {
    return plan.lr0 * std::pow(plan.decay_rate, (double)(epoch / plan.decay_interval));
}

AdamState make_adam_state(const Mlp& net) {
    AdamState st;
    for (int l = 0; l < net.n_layers(); ++l) {
        st.mW.emplace_back(net.W[(std::size_t)l].rows, net.W[(std::size_t)l].cols);
        st.vW.emplace_back(net.W[(std::size_t)l].rows, net.W[(std::size_t)l].cols);
        st.mB.emplace_back(1, net.b[(std::size_t)l].cols);
        st.vB.emplace_back(1, net.b[(std::size_t)l].cols);
    }
    return st;
}

namespace {
constexpr double ADAM_B1 = 0.9;
constexpr double ADAM_B2 = 0.999;
constexpr double ADAM_EPS = 1e-8;

void adam_update(Mat& theta, Mat& m, Mat& v, const Mat& g, double lr,
                 double bc1, double bc2, long epoch) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = g.a[i];
        if (!std::isfinite(gi))
            throw TrainingError("adam_step: non-finite gradient", epoch);
        m.a[i] = ADAM_B1 * m.a[i] + (1.0 - ADAM_B1) * gi;
        v.a[i] = ADAM_B2 * v.a[i] + (1.0 - ADAM_B2) * gi * gi;
        const double mh = m.a[i] / bc1;
        const double vh = v.a[i] / bc2;
        theta.a[i] -= lr * mh / (std::sqrt(vh) + ADAM_EPS);
    }
}
} // namespace

void adam_step(AdamState& st, Mlp& net, const MlpGrads& grads,
               const TrainPlan& plan, long epoch) {
    if ((int)grads.W.size() != net.n_layers())
        throw ShapeError("adam_step: gradient layer count mismatch");
    ++st.step;
    const double lr = plan_lr(plan, epoch);
    const double bc1 = 1.0 - std::pow(ADAM_B1, (double)st.step);
    const double bc2 = 1.0 - std::pow(ADAM_B2, (double)st.step);
    for (int l = 0; l < net.n_layers(); ++l) {
        if (!net.W[(std::size_t)l].same_shape(grads.W[(std::size_t)l]))
            throw ShapeError("adam_step: gradient shape mismatch");
        adam_update(net.W[(std::size_t)l], st.mW[(std::size_t)l], st.vW[(std::size_t)l],
                    grads.W[(std::size_t)l], lr, bc1, bc2, epoch);
        adam_update(net.b[(std::size_t)l], st.mB[(std::size_t)l], st.vB[(std::size_t)l],
                    grads.b[(std::size_t)l], lr, bc1, bc2, epoch);
    }
}

namespace {
constexpr std::uint32_t CKPT_MAGIC = 0x434e5346u; // "FSNC"
constexpr std::uint32_t CKPT_VERSION = 1;
constexpr std::uint32_t ACT_TANH = 0;

template <typename T>
void put(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
}
} // namespace

void save_checkpoint(const std::string& path, const Mlp& net,
                     std::uint64_t fingerprint) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw NumericError("save_checkpoint: cannot open " + path);
    put(f, CKPT_MAGIC);
    put(f, CKPT_VERSION);
    put(f, ACT_TANH);
    put(f, (std::uint32_t)net.sizes.size());
    for (int s : net.sizes) put(f, (std::uint32_t)s);
    put(f, fingerprint);
    std::uint64_t count = (std::uint64_t)net.n_params();
    put(f, count);
    for (int l = 0; l < net.n_layers(); ++l) {
        const Mat& W = net.W[(std::size_t)l];
        const Mat& b = net.b[(std::size_t)l];
        f.write(reinterpret_cast<const char*>(W.a.data()),
                (std::streamsize)(W.size() * sizeof(double)));
        f.write(reinterpret_cast<const char*>(b.a.data()),
                (std::streamsize)(b.size() * sizeof(double)));
    }
    if (!f) throw NumericError("save_checkpoint: write failed for " + path);
}

Mlp load_checkpoint(const std::string& path, std::uint64_t* fingerprint) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw NumericError("load_checkpoint: cannot open " + path);
    std::uint32_t magic = 0, version = 0, act = 0, nsizes = 0;
    get(f, magic);
    get(f, version);
    get(f, act);
    get(f, nsizes);
    if (magic != CKPT_MAGIC) throw NumericError("load_checkpoint: bad magic in " + path);
    if (version != CKPT_VERSION)
        throw NumericError("load_checkpoint: unsupported version " + std::to_string(version));
    if (act != ACT_TANH) throw NumericError("load_checkpoint: unknown activation tag");
    std::vector<int> sizes((std::size_t)nsizes);
    for (auto& s : sizes) {
        std::uint32_t v = 0;
        get(f, v);
        s = (int)v;
    }
    std::uint64_t fp = 0, count = 0;
    get(f, fp);
    get(f, count);
    Mlp net = make_mlp(sizes, 0);
    if ((std::uint64_t)net.n_params() != count)
        throw NumericError("load_checkpoint: parameter count mismatch");
    for (int l = 0; l < net.n_layers(); ++l) {
        Mat& W = net.W[(std::size_t)l];
        Mat& b = net.b[(std::size_t)l];
        f.read(reinterpret_cast<char*>(W.a.data()),
               (std::streamsize)(W.size() * sizeof(double)));
        f.read(reinterpret_cast<char*>(b.a.data()),
               (std::streamsize)(b.size() * sizeof(double)));
    }
    if (!f) throw NumericError("load_checkpoint: truncated file " + path);
    if (fingerprint) *fingerprint = fp;
    return net;
}

std::uint64_t plan_fingerprint(const TrainPlan& plan) {
    // FNV-1a over the plan fields, bitwise
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const unsigned char* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 1099511628211ull;
        }
    };
    mix(&plan.epochs, sizeof plan.epochs);
    mix(&plan.batch_size, sizeof plan.batch_size);
    mix(&plan.lr0, sizeof plan.lr0);
    mix(&plan.decay_rate, sizeof plan.decay_rate);
    mix(&plan.decay_interval, sizeof plan.decay_interval);
    mix(&plan.smooth_l1_beta, sizeof plan.smooth_l1_beta);
    mix(&plan.lambda_initial, sizeof plan.lambda_initial);
    mix(&plan.lambda_residual, sizeof plan.lambda_residual);
    mix(&plan.t_min, sizeof plan.t_min);
    mix(&plan.seed, sizeof plan.seed);
    return h;
}

} // namespace fsde
