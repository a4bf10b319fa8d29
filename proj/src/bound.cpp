#include "sclvm/bound.hpp"

#include <cmath>
#include <utility>

namespace sclvm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace

void LatentConfig::validate() const {
    require(q_shared >= 0 && q_private >= 0, "latent dimensions must be nonnegative");
    require(q_shared + q_private >= 1, "at least one latent dimension required");
    require(n_inducing >= 1, "at least one inducing point required");
}

void ModelState::validate() const {
    config.validate();
    kernel.validate();
    q.validate();
    u.validate();
    require(kernel.shared.dims() == config.q_shared, "shared kernel dimension mismatch");
    require(kernel.priv.dims() == config.q_private, "private kernel dimension mismatch");
    require(q.n_dims() == config.q_total(), "posterior dimension mismatch");
    require(u.inputs.cols() == config.q_total(), "inducing dimension mismatch");
    require(u.size() == config.n_inducing, "inducing count mismatch");
    require(static_cast<Eigen::Index>(labels.size()) == q.n_points(),
            "one label per training point required");
}

double kl_to_prior(const VariationalPosterior& q) {
    q.validate();
    const auto s = q.variances.array();
    const auto mu = q.means.array();
    return 0.5 * (s + mu.square() - 1.0 - s.log()).sum();
}

double f_tilde(const Vector& y_d, const PsiStats& stats, const Matrix& kuu,
               double noise_variance) {
    require(noise_variance > 0.0 && std::isfinite(noise_variance),
            "noise variance must be positive");
    const Eigen::Index n = y_d.size();
    const Eigen::Index m = kuu.rows();
    require(kuu.cols() == m, "kuu must be square");
    require(stats.psi1.rows() == n && stats.psi1.cols() == m, "psi1 shape mismatch");
    require(stats.psi2.rows() == m && stats.psi2.cols() == m, "psi2 shape mismatch");

    const double beta = 1.0 / noise_variance;
    const JitterPolicy policy;
    auto ck = cholesky_with_jitter(kuu, policy, "inducing gram");
    Matrix a = kuu + beta * stats.psi2;
    a.diagonal().array() += ck.jitter_added;
    auto ca = cholesky_with_jitter(a, policy, "collapsed system");

    const Vector b = stats.psi1.transpose() * y_d;
    const Vector c = ca.llt.solve(b);
    const double trace_k = ck.llt.solve(stats.psi2).trace();

    return 0.5 * log_det_from_llt(ck.llt) - 0.5 * log_det_from_llt(ca.llt) -
           0.5 * static_cast<double>(n) * (kLog2Pi + std::log(noise_variance)) -
           0.5 * beta * y_d.squaredNorm() + 0.5 * beta * beta * b.dot(c) -
           0.5 * beta * stats.psi0 + 0.5 * beta * trace_k;
}

namespace {

// Everything elbo, its gradient, and the training summaries share. All
// buffers are O(NM + M^2 + ND); nothing N x N is ever formed.
struct Core {
    double beta = 0.0;
    Matrix kuu;  // loaded diagonal included
    double jitter_rel = 0.0;
    Eigen::LLT<Matrix> llt_k;
    double log_det_k = 0.0;
    PsiWorkspace ws;
    Eigen::LLT<Matrix> llt_a;
    double log_det_a = 0.0;
    Matrix b;  // M x D
    Matrix c;  // M x D, A^-1 b
    double trace_k_psi2 = 0.0;
    Vector y_norm2;  // per column
    Vector quad;     // per column, b_d . c_d
};

Core build_core(const Matrix& y, const ModelState& st) {
    st.validate();
    require(y.rows() == st.q.n_points(), "data row count does not match posterior");
    require(y.cols() >= 1, "data must have at least one column");
    require(y.allFinite(), "data must be finite");

    Core core;
    core.beta = 1.0 / st.kernel.noise_variance;

    Matrix raw = gram_rows(st.u.inputs, st.u.labels, static_cast<int>(st.config.q_shared),
                           st.kernel, 0.0);
    auto ck = cholesky_with_jitter(raw, st.numerics, "inducing gram");
    core.kuu = std::move(raw);
    core.kuu.diagonal().array() += ck.jitter_added;
    core.jitter_rel = ck.jitter_added / st.kernel.diag_value();
    core.llt_k = std::move(ck.llt);
    core.log_det_k = log_det_from_llt(core.llt_k);

    compute_psi(st.q, st.labels, st.u, st.kernel, core.ws);

    Matrix a = core.kuu + core.beta * core.ws.stats.psi2;
    auto ca = cholesky_with_jitter(a, st.numerics, "collapsed system");
    core.llt_a = std::move(ca.llt);
    core.log_det_a = log_det_from_llt(core.llt_a);

    core.b = core.ws.stats.psi1.transpose() * y;
    core.c = core.llt_a.solve(core.b);
    core.trace_k_psi2 = core.llt_k.solve(core.ws.stats.psi2).trace();
    core.y_norm2 = y.colwise().squaredNorm().transpose();
    core.quad = (core.b.array() * core.c.array()).colwise().sum().transpose();
    return core;
}

BoundReport report_from_core(const Core& core, const ModelState& st, Eigen::Index n,
                             Eigen::Index d) {
    const double dn = static_cast<double>(n);
    const double dd = static_cast<double>(d);
    const double beta = core.beta;
    const double psi0 = core.ws.stats.psi0;

    BoundReport rep;
    rep.log_det_term = 0.5 * dd * (core.log_det_k - core.log_det_a);
    rep.trace_term = 0.5 * dd * beta * (core.trace_k_psi2 - psi0);
    const double shared = 0.5 * (core.log_det_k - core.log_det_a) -
                          0.5 * dn * (kLog2Pi + std::log(st.kernel.noise_variance)) -
                          0.5 * beta * psi0 + 0.5 * beta * core.trace_k_psi2;
    rep.data_fit_terms =
        (shared - 0.5 * beta * core.y_norm2.array() + 0.5 * beta * beta * core.quad.array())
            .matrix();
    rep.kl = kl_to_prior(st.q);
    rep.elbo = rep.data_fit_terms.sum() - rep.kl;
    return rep;
}

}  // namespace

BoundReport elbo(const Matrix& y, const ModelState& state) {
    const Core core = build_core(y, state);
    return report_from_core(core, state, y.rows(), y.cols());
}

ElboGradient elbo_gradient(const Matrix& y, const ModelState& state) {
    const Core core = build_core(y, state);
    const Eigen::Index n = y.rows();
    const Eigen::Index d = y.cols();
    const Eigen::Index m = state.u.size();
    const double beta = core.beta;
    const double dd = static_cast<double>(d);
    const Matrix& psi2 = core.ws.stats.psi2;

    const Matrix eye = Matrix::Identity(m, m);
    const Matrix a_inv = core.llt_a.solve(eye);
    const Matrix k_inv = core.llt_k.solve(eye);
    const Matrix cct = core.c * core.c.transpose();

    PsiUpstream up;
    up.dpsi0 = -0.5 * dd * beta;
    up.dpsi1 = beta * beta * (y * core.c.transpose());
    {
        Matrix d2 = -0.5 * dd * beta * a_inv - 0.5 * beta * beta * beta * cct +
                    0.5 * dd * beta * k_inv;
        up.dpsi2 = 0.5 * (d2 + d2.transpose());
    }

    Matrix dkuu;
    {
        const Matrix k_inv_psi2_k_inv = k_inv * psi2 * k_inv;
        Matrix dk = 0.5 * dd * (k_inv - a_inv) - 0.5 * beta * beta * cct -
                    0.5 * dd * beta * k_inv_psi2_k_inv;
        dkuu = 0.5 * (dk + dk.transpose());
    }

    KernelGrad kg =
        KernelGrad::zeros(n, m, state.config.q_shared, state.config.q_private);
    accumulate_psi_gradients(core.ws, up, state.q, state.labels, state.u, state.kernel, kg);
    accumulate_gram_gradients(dkuu, state.u, state.kernel, core.jitter_rel, kg);

    const double trace_a_psi2 = (a_inv.array() * psi2.array()).sum();
    const double trace_btc = (core.b.array() * core.c.array()).sum();
    const double trace_ct_psi2_c = (core.c.array() * (psi2 * core.c).array()).sum();
    const double df_dbeta = -0.5 * dd * trace_a_psi2 +
                            0.5 * static_cast<double>(n) * dd / beta - 0.5 * core.y_norm2.sum() +
                            beta * trace_btc - 0.5 * beta * beta * trace_ct_psi2_c -
                            0.5 * dd * core.ws.stats.psi0 + 0.5 * dd * core.trace_k_psi2;

    ElboGradient g;
    g.report = report_from_core(core, state, n, d);
    g.dmeans = kg.dmeans - state.q.means;
    g.dlog_variances = (kg.dvariances.array() * state.q.variances.array() -
                        0.5 * (state.q.variances.array() - 1.0))
                           .matrix();
    g.dinducing = std::move(kg.dinducing);
    const auto ls2_s = state.kernel.shared.lengthscales.array().square();
    g.dlog_ls_shared = (2.0 * ls2_s * kg.dls2_shared.array()).matrix();
    g.dlog_var_shared = state.kernel.shared.variance * kg.dvar_shared;
    if (state.config.q_private > 0) {
        const auto ls2_p = state.kernel.priv.lengthscales.array().square();
        g.dlog_ls_private = (2.0 * ls2_p * kg.dls2_private.array()).matrix();
        g.dlog_var_private = state.kernel.priv.variance * kg.dvar_private;
    } else {
        g.dlog_ls_private = Vector();
        g.dlog_var_private = 0.0;
    }
    g.dlog_noise = -beta * df_dbeta;
    return g;
}

Eigen::Index packed_size(const ModelState& state) {
    const Eigen::Index n = state.q.n_points();
    const Eigen::Index qq = state.config.q_total();
    const Eigen::Index m = state.config.n_inducing;
    return 2 * n * qq + m * qq + state.config.q_shared + state.config.q_private + 3;
}

Vector pack_parameters(const ModelState& state) {
    Vector theta(packed_size(state));
    Eigen::Index off = 0;
    auto put = [&](const Matrix& mat) {
        theta.segment(off, mat.size()) = Eigen::Map<const Vector>(mat.data(), mat.size());
        off += mat.size();
    };
    put(state.q.means);
    put(state.q.variances.array().log().matrix());
    put(state.u.inputs);
    theta.segment(off, state.config.q_shared) =
        state.kernel.shared.lengthscales.array().log().matrix();
    off += state.config.q_shared;
    theta[off++] = std::log(state.kernel.shared.variance);
    theta.segment(off, state.config.q_private) =
        state.kernel.priv.lengthscales.array().log().matrix();
    off += state.config.q_private;
    theta[off++] = std::log(state.kernel.priv.variance);
    theta[off++] = std::log(state.kernel.noise_variance);
    return theta;
}

void unpack_parameters(const Vector& theta, ModelState& state) {
    require(theta.size() == packed_size(state), "packed parameter size mismatch");
    const Eigen::Index n = state.q.n_points();
    const Eigen::Index qq = state.config.q_total();
    const Eigen::Index m = state.config.n_inducing;
    Eigen::Index off = 0;
    state.q.means = Eigen::Map<const Matrix>(theta.data() + off, n, qq);
    off += n * qq;
    state.q.variances =
        Eigen::Map<const Matrix>(theta.data() + off, n, qq).array().exp().matrix();
    off += n * qq;
    state.u.inputs = Eigen::Map<const Matrix>(theta.data() + off, m, qq);
    off += m * qq;
    state.kernel.shared.lengthscales =
        theta.segment(off, state.config.q_shared).array().exp().matrix();
    off += state.config.q_shared;
    state.kernel.shared.variance = std::exp(theta[off++]);
    state.kernel.priv.lengthscales =
        theta.segment(off, state.config.q_private).array().exp().matrix();
    off += state.config.q_private;
    state.kernel.priv.variance = std::exp(theta[off++]);
    state.kernel.noise_variance = std::exp(theta[off++]);
}

Vector pack_gradient(const ElboGradient& g, const ModelState& state) {
    Vector grad(packed_size(state));
    Eigen::Index off = 0;
    auto put = [&](const Matrix& mat) {
        grad.segment(off, mat.size()) = Eigen::Map<const Vector>(mat.data(), mat.size());
        off += mat.size();
    };
    put(g.dmeans);
    put(g.dlog_variances);
    put(g.dinducing);
    grad.segment(off, state.config.q_shared) = g.dlog_ls_shared;
    off += state.config.q_shared;
    grad[off++] = g.dlog_var_shared;
    grad.segment(off, state.config.q_private) = g.dlog_ls_private;
    off += state.config.q_private;
    grad[off++] = g.dlog_var_private;
    grad[off++] = g.dlog_noise;
    return grad;
}

TrainingSummaries summarize_training(const Matrix& y, const ModelState& state) {
    const Core core = build_core(y, state);
    const BoundReport rep = report_from_core(core, state, y.rows(), y.cols());
    TrainingSummaries s;
    s.psi2 = core.ws.stats.psi2;
    s.b = core.b;
    s.psi0 = core.ws.stats.psi0;
    s.y_norm2 = core.y_norm2.sum();
    s.n_points = y.rows();
    s.n_dims = y.cols();
    s.f_total = rep.data_fit_terms.sum();
    return s;
}

AugmentedPointBound augmented_point_bound(const TrainingSummaries& tr, const ModelState& state,
                                          const Vector& y_star, CategoryLabel label,
                                          const Vector& mean_star, const Vector& var_star,
                                          bool with_gradients) {
    state.kernel.validate();
    const Eigen::Index qq = state.config.q_total();
    const Eigen::Index m = state.u.size();
    const double dd = static_cast<double>(tr.n_dims);
    require(y_star.size() == tr.n_dims, "held-out point dimension mismatch");
    require(mean_star.size() == qq && var_star.size() == qq,
            "held-out posterior dimension mismatch");
    require((var_star.array() > 0.0).all(), "held-out posterior variances must be positive");

    const double beta = 1.0 / state.kernel.noise_variance;

    VariationalPosterior qs;
    qs.means = mean_star.transpose();
    qs.variances = var_star.transpose();
    const std::vector<CategoryLabel> lab{label};
    PsiWorkspace ws;
    compute_psi(qs, lab, state.u, state.kernel, ws);

    Matrix raw = gram_rows(state.u.inputs, state.u.labels, static_cast<int>(state.config.q_shared),
                           state.kernel, 0.0);
    auto ck = cholesky_with_jitter(raw, state.numerics, "inducing gram");
    Matrix kuu = std::move(raw);
    kuu.diagonal().array() += ck.jitter_added;
    const double log_det_k = log_det_from_llt(ck.llt);

    const Matrix psi2_aug = tr.psi2 + ws.stats.psi2;
    Matrix a = kuu + beta * psi2_aug;
    auto ca = cholesky_with_jitter(a, state.numerics, "augmented collapsed system");
    const double log_det_a = log_det_from_llt(ca.llt);

    const Matrix b_aug = tr.b + ws.stats.psi1.transpose() * y_star.transpose();
    const Matrix c = ca.llt.solve(b_aug);
    const double trace_k = ck.llt.solve(psi2_aug).trace();
    const double psi0_aug = tr.psi0 + ws.stats.psi0;
    const double n_aug = static_cast<double>(tr.n_points) + 1.0;
    const double y_norm2_aug = tr.y_norm2 + y_star.squaredNorm();
    const double quad = (b_aug.array() * c.array()).sum();

    const double f_aug = 0.5 * dd * (log_det_k - log_det_a) -
                         0.5 * n_aug * dd * (kLog2Pi + std::log(state.kernel.noise_variance)) -
                         0.5 * beta * y_norm2_aug + 0.5 * beta * beta * quad -
                         0.5 * dd * beta * psi0_aug + 0.5 * dd * beta * trace_k;
    const double kl =
        0.5 *
        (var_star.array() + mean_star.array().square() - 1.0 - var_star.array().log()).sum();

    AugmentedPointBound out;
    out.bound_delta = f_aug - tr.f_total - kl;
    if (!with_gradients) return out;

    const Matrix eye = Matrix::Identity(m, m);
    const Matrix a_inv = ca.llt.solve(eye);
    const Matrix k_inv = ck.llt.solve(eye);
    const Matrix cct = c * c.transpose();

    PsiUpstream up;
    up.dpsi0 = -0.5 * dd * beta;
    up.dpsi1 = beta * beta * (c * y_star).transpose();
    {
        Matrix d2 = -0.5 * dd * beta * a_inv - 0.5 * beta * beta * beta * cct +
                    0.5 * dd * beta * k_inv;
        up.dpsi2 = 0.5 * (d2 + d2.transpose());
    }
    KernelGrad kg = KernelGrad::zeros(1, m, state.config.q_shared, state.config.q_private);
    accumulate_psi_gradients(ws, up, qs, lab, state.u, state.kernel, kg);

    out.dmean = kg.dmeans.row(0).transpose() - mean_star;
    out.dlog_variance = (kg.dvariances.row(0).transpose().array() * var_star.array() -
                         0.5 * (var_star.array() - 1.0))
                            .matrix();
    return out;
}

}  // namespace sclvm
