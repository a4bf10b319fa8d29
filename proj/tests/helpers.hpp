#ifndef SCLVM_TESTS_HELPERS_HPP
#define SCLVM_TESTS_HELPERS_HPP

#include "sclvm/bound.hpp"
#include "sclvm/kernels.hpp"
#include "sclvm/psi.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace sclvm::testing {

// ---------------------------------------------------------------------------
// Independent oracles. These recompute model quantities through routes the
// library never takes, so shared bugs are unlikely.

/// log N(y | 0, K + noise I) via a dense factorization.
inline double dense_gp_lml(const Vector& y, const Matrix& k, double noise_variance) {
    const Eigen::Index n = y.size();
    Matrix c = k;
    c.diagonal().array() += noise_variance;
    const Eigen::LLT<Matrix> llt(c);
    const Vector alpha = llt.solve(y);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * y.dot(alpha) - 0.5 * log_det -
           0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
}

/// Central finite differences of a scalar function.
inline Vector finite_diff(const std::function<double(const Vector&)>& f, const Vector& x,
                          double step) {
    Vector g(x.size());
    Vector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double saved = xp[i];
        xp[i] = saved + step;
        const double hi = f(xp);
        xp[i] = saved - step;
        const double lo = f(xp);
        xp[i] = saved;
        g[i] = (hi - lo) / (2.0 * step);
    }
    return g;
}

/// Regularized incomplete beta I_x(a, b) by the Lentz continued fraction.
inline double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - reg_inc_beta(b, a, 1.0 - x);
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double tiny = 1e-300;
    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 400; ++m) {
        const double md = static_cast<double>(m);
        double num = md * (b - md) * x / ((a + 2.0 * md - 1.0) * (a + 2.0 * md));
        d = 1.0 + num * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        num = -(a + md) * (a + b + md) * x / ((a + 2.0 * md) * (a + 2.0 * md + 1.0));
        d = 1.0 + num * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-14) break;
    }
    return std::exp(log_front) * h / a;
}

/// Two-sided Welch t-test p-value for unequal-variance samples.
inline double welch_t_pvalue(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double nx = static_cast<double>(xs.size());
    const double ny = static_cast<double>(ys.size());
    double mx = 0.0, my = 0.0;
    for (double v : xs) mx += v;
    for (double v : ys) my += v;
    mx /= nx;
    my /= ny;
    double vx = 0.0, vy = 0.0;
    for (double v : xs) vx += (v - mx) * (v - mx);
    for (double v : ys) vy += (v - my) * (v - my);
    vx /= nx - 1.0;
    vy /= ny - 1.0;
    const double se2 = vx / nx + vy / ny;
    if (se2 <= 0.0) return 1.0;
    const double t = (mx - my) / std::sqrt(se2);
    const double df = se2 * se2 /
                      (vx * vx / (nx * nx * (nx - 1.0)) + vy * vy / (ny * ny * (ny - 1.0)));
    const double x = df / (df + t * t);
    return reg_inc_beta(0.5 * df, 0.5, x);
}

/// Importance-sampled estimate of the exact log marginal likelihood, using
/// the variational posterior as proposal and the dense (non-sparse) model
/// likelihood. Returns the log estimate and a delta-method standard error
/// on the log scale.
struct LogMarginalEstimate {
    double log_value = 0.0;
    double log_se = 0.0;
};

inline LogMarginalEstimate is_log_marginal(const Matrix& y, const ModelState& state,
                                           std::int64_t n_samples, std::uint64_t seed) {
    Rng rng(seed);
    const Eigen::Index n = y.rows();
    const Eigen::Index q = state.q.n_dims();
    std::vector<double> log_w(static_cast<std::size_t>(n_samples));
    std::vector<LatentPoint> pts(static_cast<std::size_t>(n));
    for (std::int64_t s = 0; s < n_samples; ++s) {
        double lw = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            LatentPoint& pt = pts[static_cast<std::size_t>(i)];
            pt.shared.resize(state.config.q_shared);
            pt.priv.resize(state.config.q_private);
            pt.label = state.labels[static_cast<std::size_t>(i)];
            for (Eigen::Index j = 0; j < q; ++j) {
                const double mu = state.q.means(i, j);
                const double sd = std::sqrt(state.q.variances(i, j));
                const double z = rng.normal();
                const double x = mu + sd * z;
                // log p(x) - log q(x) under unit prior and diagonal proposal.
                lw += -0.5 * x * x + 0.5 * z * z + std::log(sd);
                if (j < state.config.q_shared)
                    pt.shared[j] = x;
                else
                    pt.priv[j - state.config.q_shared] = x;
            }
        }
        const Matrix kxx = gram(pts, state.kernel, 0.0);
        for (Eigen::Index d = 0; d < y.cols(); ++d)
            lw += dense_gp_lml(y.col(d), kxx, state.kernel.noise_variance);
        log_w[static_cast<std::size_t>(s)] = lw;
    }
    double peak = log_w[0];
    for (double v : log_w) peak = std::max(peak, v);
    double mean = 0.0;
    for (double v : log_w) mean += std::exp(v - peak);
    mean /= static_cast<double>(n_samples);
    double var = 0.0;
    for (double v : log_w) {
        const double d = std::exp(v - peak) - mean;
        var += d * d;
    }
    var /= static_cast<double>(n_samples - 1);
    LogMarginalEstimate est;
    est.log_value = peak + std::log(mean) - std::log(static_cast<double>(n_samples));
    est.log_se = std::sqrt(var / static_cast<double>(n_samples)) / mean;
    return est;
}

// ---------------------------------------------------------------------------
// Random fixture builders. All deterministic in the seed.

inline std::vector<CategoryLabel> cycle_labels(Eigen::Index n, int categories) {
    std::vector<CategoryLabel> labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        labels[static_cast<std::size_t>(i)] = CategoryLabel{static_cast<int>(i) % categories + 1};
    return labels;
}

inline ModelState random_state(Eigen::Index n, Eigen::Index m, Eigen::Index q_s,
                               Eigen::Index q_p, int categories, std::uint64_t seed) {
    Rng rng(seed);
    ModelState st;
    st.config.q_shared = q_s;
    st.config.q_private = q_p;
    st.config.n_inducing = m;
    const Eigen::Index q = q_s + q_p;
    st.q.means = rng.normal_matrix(n, q);
    st.q.variances = Matrix::NullaryExpr(n, q, [&rng]() { return rng.uniform(0.05, 0.6); });
    st.u.inputs = rng.normal_matrix(m, q) * 1.2;
    st.labels = cycle_labels(n, categories);
    st.u.labels = cycle_labels(m, categories);
    st.kernel.shared.variance = rng.uniform(0.5, 1.6);
    st.kernel.shared.lengthscales =
        Vector::NullaryExpr(q_s, [&rng]() { return rng.uniform(0.7, 1.8); });
    st.kernel.priv.variance = rng.uniform(0.4, 1.3);
    st.kernel.priv.lengthscales =
        Vector::NullaryExpr(q_p, [&rng]() { return rng.uniform(0.7, 1.8); });
    st.kernel.noise_variance = rng.uniform(0.05, 0.3);
    st.validate();
    return st;
}

inline Matrix random_outputs(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    return rng.normal_matrix(n, d);
}

inline std::vector<LatentPoint> to_points(const Matrix& rows,
                                          const std::vector<CategoryLabel>& labels,
                                          Eigen::Index q_s) {
    std::vector<LatentPoint> pts(static_cast<std::size_t>(rows.rows()));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        pts[static_cast<std::size_t>(i)].shared = rows.row(i).head(q_s).transpose();
        pts[static_cast<std::size_t>(i)].priv =
            rows.row(i).tail(rows.cols() - q_s).transpose();
        pts[static_cast<std::size_t>(i)].label = labels[static_cast<std::size_t>(i)];
    }
    return pts;
}

}  // namespace sclvm::testing

#endif
