#include "sclvm/psi.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace sclvm {

namespace {

// Exponents below this produce exact zeros instead of denormals.
constexpr double kExpFloor = -700.0;

struct Block {
    Eigen::Index offset;
    Eigen::Index dims;
    const EqKernelParams* params;
};

Block shared_block(const KernelParams& p) { return {0, p.shared.dims(), &p.shared}; }

Block private_block(const KernelParams& p) { return {p.shared.dims(), p.priv.dims(), &p.priv}; }

// E[k(x_n, z_m)] factor for one kernel block, without any label gate.
// phi(n, m) = v * prod_q sqrt(l2_q / t_nq) * exp(-(mu_nq - z_mq)^2 / (2 t_nq))
// with t_nq = l2_q + s_nq.
void fill_phi(const VariationalPosterior& q, const InducingSet& u, const Block& b,
              const std::vector<CategoryLabel>* gate, const std::vector<CategoryLabel>& labels,
              Matrix& phi) {
    const Eigen::Index n_pts = q.n_points();
    const Eigen::Index m_pts = u.size();
    phi.setZero(n_pts, m_pts);
    if (b.dims == 0) return;

    const Vector ls2 = b.params->lengthscales.array().square();
    const double log_v = std::log(b.params->variance);

    Vector inv_t(b.dims);
    for (Eigen::Index n = 0; n < n_pts; ++n) {
        double pre = log_v;
        for (Eigen::Index j = 0; j < b.dims; ++j) {
            const double t = ls2[j] + q.variances(n, b.offset + j);
            inv_t[j] = 1.0 / t;
            pre += 0.5 * std::log(ls2[j] * inv_t[j]);
        }
        for (Eigen::Index m = 0; m < m_pts; ++m) {
            if (gate != nullptr && (*gate)[static_cast<std::size_t>(m)] != labels[static_cast<std::size_t>(n)])
                continue;
            double expo = pre;
            for (Eigen::Index j = 0; j < b.dims; ++j) {
                const double delta = q.means(n, b.offset + j) - u.inputs(m, b.offset + j);
                expo -= 0.5 * delta * delta * inv_t[j];
            }
            if (expo > kExpFloor) phi(n, m) = std::exp(expo);
        }
    }
}

// Precomputed per-pair geometry for the second-moment terms of one block.
struct PairTable {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;  // m <= m'
    Matrix zbar;                                               // dims x n_pairs
    Vector dz2;  // sum_q (z_mq - z_m'q)^2 / (4 l2_q)
};

PairTable build_pairs(const InducingSet& u, const Block& b, bool require_equal_labels) {
    PairTable tab;
    const Eigen::Index m_pts = u.size();
    for (Eigen::Index m = 0; m < m_pts; ++m)
        for (Eigen::Index m2 = m; m2 < m_pts; ++m2) {
            if (require_equal_labels &&
                u.labels[static_cast<std::size_t>(m)] != u.labels[static_cast<std::size_t>(m2)])
                continue;
            tab.pairs.emplace_back(m, m2);
        }
    const auto n_pairs = static_cast<Eigen::Index>(tab.pairs.size());
    tab.zbar.resize(b.dims, n_pairs);
    tab.dz2.resize(n_pairs);
    const Vector ls2 = b.params->lengthscales.array().square();
    for (Eigen::Index k = 0; k < n_pairs; ++k) {
        const auto [m, m2] = tab.pairs[static_cast<std::size_t>(k)];
        double acc = 0.0;
        for (Eigen::Index j = 0; j < b.dims; ++j) {
            const double zm = u.inputs(m, b.offset + j);
            const double zm2 = u.inputs(m2, b.offset + j);
            tab.zbar(j, k) = 0.5 * (zm + zm2);
            const double d = zm - zm2;
            acc += d * d / (4.0 * ls2[j]);
        }
        tab.dz2[k] = acc;
    }
    return tab;
}

// Per-point second-moment factors:
// omega(n; m, m') = v^2 * prod_q sqrt(l2_q / T_nq)
//                   * exp(-dz2 - (mu_nq - zbar_q)^2 / T_nq)
// with T_nq = l2_q + 2 s_nq. Accumulates sum_n omega into per-pair totals.
void accumulate_omega(const VariationalPosterior& q, const Block& b, const PairTable& tab,
                      const std::vector<CategoryLabel>* gate_data_label,
                      const std::vector<CategoryLabel>& labels, const InducingSet& u,
                      Vector& pair_totals) {
    const Eigen::Index n_pts = q.n_points();
    const auto n_pairs = static_cast<Eigen::Index>(tab.pairs.size());
    pair_totals.setZero(n_pairs);
    if (b.dims == 0 || n_pairs == 0) return;

    const Vector ls2 = b.params->lengthscales.array().square();
    const double log_v2 = 2.0 * std::log(b.params->variance);

    Vector inv_T(b.dims);
    for (Eigen::Index n = 0; n < n_pts; ++n) {
        double pre = log_v2;
        for (Eigen::Index j = 0; j < b.dims; ++j) {
            const double T = ls2[j] + 2.0 * q.variances(n, b.offset + j);
            inv_T[j] = 1.0 / T;
            pre += 0.5 * std::log(ls2[j] * inv_T[j]);
        }
        for (Eigen::Index k = 0; k < n_pairs; ++k) {
            if (gate_data_label != nullptr) {
                const auto m = tab.pairs[static_cast<std::size_t>(k)].first;
                if (u.labels[static_cast<std::size_t>(m)] != labels[static_cast<std::size_t>(n)])
                    continue;
            }
            double expo = pre - tab.dz2[k];
            for (Eigen::Index j = 0; j < b.dims; ++j) {
                const double e = q.means(n, b.offset + j) - tab.zbar(j, k);
                expo -= e * e * inv_T[j];
            }
            if (expo > kExpFloor) pair_totals[k] += std::exp(expo);
        }
    }
}

void validate_inputs(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
                     const InducingSet& u, const KernelParams& p) {
    q.validate();
    u.validate();
    p.validate();
    const Eigen::Index q_total = p.shared.dims() + p.priv.dims();
    require(q.n_dims() == q_total, "posterior dimension does not match kernel dimensions");
    require(u.inputs.cols() == q_total, "inducing dimension does not match kernel dimensions");
    require(static_cast<Eigen::Index>(labels.size()) == q.n_points(),
            "label count does not match posterior point count");
}

}  // namespace

void VariationalPosterior::validate() const {
    require(means.rows() == variances.rows() && means.cols() == variances.cols(),
            "posterior means and variances must have matching shapes");
    require(means.rows() > 0 && means.cols() > 0, "posterior must be non-empty");
    require((variances.array() > 0.0).all(), "posterior variances must be positive");
    require(means.allFinite() && variances.allFinite(), "posterior entries must be finite");
}

void InducingSet::validate() const {
    require(inputs.rows() > 0, "inducing set must be non-empty");
    require(static_cast<Eigen::Index>(labels.size()) == inputs.rows(),
            "inducing labels must match inducing input count");
    require(inputs.allFinite(), "inducing inputs must be finite");
}

void compute_psi(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
                 const InducingSet& u, const KernelParams& p, PsiWorkspace& ws) {
    validate_inputs(q, labels, u, p);
    const Eigen::Index m_pts = u.size();
    const Block bs = shared_block(p);
    const Block bp = private_block(p);

    fill_phi(q, u, bs, nullptr, labels, ws.phi_shared);
    if (p.has_private())
        fill_phi(q, u, bp, &u.labels, labels, ws.phi_private);
    else
        ws.phi_private.setZero(q.n_points(), m_pts);

    ws.stats.psi0 = static_cast<double>(q.n_points()) * p.diag_value();
    ws.stats.psi1 = ws.phi_shared + ws.phi_private;

    ws.stats.psi2.setZero(m_pts, m_pts);
    {
        const PairTable tab = build_pairs(u, bs, false);
        Vector totals;
        accumulate_omega(q, bs, tab, nullptr, labels, u, totals);
        for (std::size_t k = 0; k < tab.pairs.size(); ++k) {
            const auto [m, m2] = tab.pairs[k];
            ws.stats.psi2(m, m2) += totals[static_cast<Eigen::Index>(k)];
            if (m != m2) ws.stats.psi2(m2, m) += totals[static_cast<Eigen::Index>(k)];
        }
    }
    if (p.has_private()) {
        const PairTable tab = build_pairs(u, bp, true);
        Vector totals;
        accumulate_omega(q, bp, tab, &u.labels, labels, u, totals);
        for (std::size_t k = 0; k < tab.pairs.size(); ++k) {
            const auto [m, m2] = tab.pairs[k];
            ws.stats.psi2(m, m2) += totals[static_cast<Eigen::Index>(k)];
            if (m != m2) ws.stats.psi2(m2, m) += totals[static_cast<Eigen::Index>(k)];
        }
        // Cross moments factorize over the disjoint coordinate blocks.
        const Matrix cross = ws.phi_shared.transpose() * ws.phi_private;
        ws.stats.psi2 += cross + cross.transpose();
    }
}

double psi0(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
            const KernelParams& p) {
    require(static_cast<Eigen::Index>(labels.size()) == q.n_points(),
            "label count does not match posterior point count");
    p.validate();
    return static_cast<double>(q.n_points()) * p.diag_value();
}

Matrix psi1(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
            const InducingSet& u, const KernelParams& p) {
    PsiWorkspace ws;
    compute_psi(q, labels, u, p, ws);
    return std::move(ws.stats.psi1);
}

Matrix psi2(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
            const InducingSet& u, const KernelParams& p) {
    PsiWorkspace ws;
    compute_psi(q, labels, u, p, ws);
    return std::move(ws.stats.psi2);
}

PsiMcResult psi_mc_oracle(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
                          const InducingSet& u, const KernelParams& p, std::int64_t n_samples,
                          std::uint64_t seed) {
    validate_inputs(q, labels, u, p);
    require(n_samples >= 1000, "oracle needs at least 1000 samples");
    const Eigen::Index n_pts = q.n_points();
    const Eigen::Index m_pts = u.size();
    const Eigen::Index q_s = p.shared.dims();
    const Eigen::Index q_total = q.n_dims();

    Rng rng(seed);
    const Matrix stddev = q.variances.array().sqrt();
    Matrix x(n_pts, q_total);
    Matrix k1(n_pts, m_pts);

    double p0_sum = 0.0, p0_sq = 0.0;
    Matrix p1_sum = Matrix::Zero(n_pts, m_pts), p1_sq = Matrix::Zero(n_pts, m_pts);
    Matrix p2_sum = Matrix::Zero(m_pts, m_pts), p2_sq = Matrix::Zero(m_pts, m_pts);

    LatentPoint a, b;
    for (std::int64_t s = 0; s < n_samples; ++s) {
        for (Eigen::Index n = 0; n < n_pts; ++n)
            for (Eigen::Index j = 0; j < q_total; ++j)
                x(n, j) = q.means(n, j) + stddev(n, j) * rng.normal();

        double p0 = 0.0;
        for (Eigen::Index n = 0; n < n_pts; ++n) {
            a.shared = x.row(n).head(q_s).transpose();
            a.priv = x.row(n).tail(q_total - q_s).transpose();
            a.label = labels[static_cast<std::size_t>(n)];
            p0 += eval_composite(a, a, p);
            for (Eigen::Index m = 0; m < m_pts; ++m) {
                b.shared = u.inputs.row(m).head(q_s).transpose();
                b.priv = u.inputs.row(m).tail(q_total - q_s).transpose();
                b.label = u.labels[static_cast<std::size_t>(m)];
                k1(n, m) = eval_composite(a, b, p);
            }
        }
        p0_sum += p0;
        p0_sq += p0 * p0;
        p1_sum += k1;
        p1_sq += k1.array().square().matrix();
        const Matrix t2 = k1.transpose() * k1;
        p2_sum += t2;
        p2_sq += t2.array().square().matrix();
    }

    const double ns = static_cast<double>(n_samples);
    auto se_scalar = [ns](double sum, double sq) {
        const double mean = sum / ns;
        const double var = std::max(0.0, (sq - ns * mean * mean) / (ns - 1.0));
        return std::sqrt(var / ns);
    };

    PsiMcResult out;
    out.stats.psi0 = p0_sum / ns;
    out.psi0_se = se_scalar(p0_sum, p0_sq);
    out.stats.psi1 = p1_sum / ns;
    out.stats.psi2 = p2_sum / ns;
    out.psi1_se.resize(n_pts, m_pts);
    out.psi2_se.resize(m_pts, m_pts);
    for (Eigen::Index i = 0; i < n_pts; ++i)
        for (Eigen::Index j = 0; j < m_pts; ++j) out.psi1_se(i, j) = se_scalar(p1_sum(i, j), p1_sq(i, j));
    for (Eigen::Index i = 0; i < m_pts; ++i)
        for (Eigen::Index j = 0; j < m_pts; ++j) out.psi2_se(i, j) = se_scalar(p2_sum(i, j), p2_sq(i, j));
    return out;
}

KernelGrad KernelGrad::zeros(Eigen::Index n, Eigen::Index m, Eigen::Index q_s, Eigen::Index q_p) {
    KernelGrad g;
    g.dmeans = Matrix::Zero(n, q_s + q_p);
    g.dvariances = Matrix::Zero(n, q_s + q_p);
    g.dinducing = Matrix::Zero(m, q_s + q_p);
    g.dls2_shared = Vector::Zero(q_s);
    g.dls2_private = Vector::Zero(q_p);
    return g;
}

namespace {

// Gradient of sum_{n,m} w(n,m) * phi(n,m) for one block, where `weights`
// already includes every upstream path into that phi factor.
void phi_backward(const Matrix& weights, const Matrix& phi, const VariationalPosterior& q,
                  const InducingSet& u, const Block& b, Vector& dls2, double& dvar,
                  KernelGrad& out) {
    const Eigen::Index n_pts = q.n_points();
    const Eigen::Index m_pts = u.size();
    const Vector ls2 = b.params->lengthscales.array().square();
    const double inv_v = 1.0 / b.params->variance;

    Vector inv_t(b.dims);
    for (Eigen::Index n = 0; n < n_pts; ++n) {
        for (Eigen::Index j = 0; j < b.dims; ++j)
            inv_t[j] = 1.0 / (ls2[j] + q.variances(n, b.offset + j));
        for (Eigen::Index m = 0; m < m_pts; ++m) {
            const double w = weights(n, m) * phi(n, m);
            if (w == 0.0) continue;
            dvar += w * inv_v;
            for (Eigen::Index j = 0; j < b.dims; ++j) {
                const Eigen::Index col = b.offset + j;
                const double delta = q.means(n, col) - u.inputs(m, col);
                const double dt = delta * inv_t[j];
                out.dmeans(n, col) -= w * dt;
                out.dinducing(m, col) += w * dt;
                const double half_curv = 0.5 * (dt * dt - inv_t[j]);
                out.dvariances(n, col) += w * half_curv;
                dls2[j] += w * (0.5 / ls2[j] + half_curv);
            }
        }
    }
}

// Gradient of the per-block omega contributions to psi2. `dpsi2` must be
// symmetric; each unordered pair's omega lands in both mirrored entries, so
// off-diagonal pairs carry weight 2 * dpsi2(m, m').
void omega_backward(const Matrix& dpsi2, const VariationalPosterior& q, const InducingSet& u,
                    const Block& b, const PairTable& tab,
                    const std::vector<CategoryLabel>* gate_data_label,
                    const std::vector<CategoryLabel>& labels, Vector& dls2, double& dvar,
                    KernelGrad& out) {
    const Eigen::Index n_pts = q.n_points();
    const auto n_pairs = static_cast<Eigen::Index>(tab.pairs.size());
    if (b.dims == 0 || n_pairs == 0) return;

    const Vector ls2 = b.params->lengthscales.array().square();
    const double log_v2 = 2.0 * std::log(b.params->variance);
    const double inv_v = 1.0 / b.params->variance;

    Vector inv_T(b.dims);
    for (Eigen::Index n = 0; n < n_pts; ++n) {
        double pre = log_v2;
        for (Eigen::Index j = 0; j < b.dims; ++j) {
            inv_T[j] = 1.0 / (ls2[j] + 2.0 * q.variances(n, b.offset + j));
            pre += 0.5 * std::log(ls2[j] * inv_T[j]);
        }
        for (Eigen::Index k = 0; k < n_pairs; ++k) {
            const auto [m, m2] = tab.pairs[static_cast<std::size_t>(k)];
            if (gate_data_label != nullptr &&
                u.labels[static_cast<std::size_t>(m)] != labels[static_cast<std::size_t>(n)])
                continue;
            double expo = pre - tab.dz2[k];
            for (Eigen::Index j = 0; j < b.dims; ++j) {
                const double e = q.means(n, b.offset + j) - tab.zbar(j, k);
                expo -= e * e * inv_T[j];
            }
            if (expo <= kExpFloor) continue;
            const double mult = (m == m2) ? 1.0 : 2.0;
            const double w = mult * dpsi2(m, m2) * std::exp(expo);
            if (w == 0.0) continue;
            dvar += 2.0 * w * inv_v;
            for (Eigen::Index j = 0; j < b.dims; ++j) {
                const Eigen::Index col = b.offset + j;
                const double e = q.means(n, col) - tab.zbar(j, k);
                const double et = e * inv_T[j];
                const double d = u.inputs(m, col) - u.inputs(m2, col);
                const double d_over_2l2 = 0.5 * d / ls2[j];
                out.dmeans(n, col) -= 2.0 * w * et;
                out.dvariances(n, col) += w * (2.0 * et * et - inv_T[j]);
                out.dinducing(m, col) += w * (et - d_over_2l2);
                out.dinducing(m2, col) += w * (et + d_over_2l2);
                dls2[j] += w * (0.5 / ls2[j] - 0.5 * inv_T[j] +
                                0.25 * d * d / (ls2[j] * ls2[j]) + et * et);
            }
        }
    }
}

}  // namespace

void accumulate_psi_gradients(const PsiWorkspace& ws, const PsiUpstream& up,
                              const VariationalPosterior& q,
                              const std::vector<CategoryLabel>& labels, const InducingSet& u,
                              const KernelParams& p, KernelGrad& out) {
    validate_inputs(q, labels, u, p);
    const Block bs = shared_block(p);
    const Block bp = private_block(p);

    out.dvar_shared += static_cast<double>(q.n_points()) * up.dpsi0;
    if (p.has_private()) out.dvar_private += static_cast<double>(q.n_points()) * up.dpsi0;

    // Every path into the phi factors: psi1 directly, plus the cross moments
    // phi_s^T phi_p + phi_p^T phi_s inside psi2.
    Matrix weight_s = up.dpsi1;
    Matrix weight_p;
    if (p.has_private()) {
        weight_s += 2.0 * ws.phi_private * up.dpsi2;
        weight_p = up.dpsi1 + 2.0 * ws.phi_shared * up.dpsi2;
    }
    phi_backward(weight_s, ws.phi_shared, q, u, bs, out.dls2_shared, out.dvar_shared, out);
    if (p.has_private())
        phi_backward(weight_p, ws.phi_private, q, u, bp, out.dls2_private, out.dvar_private, out);

    {
        const PairTable tab = build_pairs(u, bs, false);
        omega_backward(up.dpsi2, q, u, bs, tab, nullptr, labels, out.dls2_shared, out.dvar_shared,
                       out);
    }
    if (p.has_private()) {
        const PairTable tab = build_pairs(u, bp, true);
        omega_backward(up.dpsi2, q, u, bp, tab, &u.labels, labels, out.dls2_private,
                       out.dvar_private, out);
    }
}

void accumulate_gram_gradients(const Matrix& dkuu, const InducingSet& u, const KernelParams& p,
                               double jitter_rel, KernelGrad& out) {
    u.validate();
    p.validate();
    const Eigen::Index m_pts = u.size();
    require(dkuu.rows() == m_pts && dkuu.cols() == m_pts, "gram adjoint shape mismatch");

    const Block bs = shared_block(p);
    const Block bp = private_block(p);
    const Vector ls2_s = p.shared.lengthscales.array().square();
    const Vector ls2_p = p.has_private() ? Vector(p.priv.lengthscales.array().square()) : Vector();

    for (Eigen::Index m = 0; m < m_pts; ++m) {
        for (Eigen::Index m2 = m; m2 < m_pts; ++m2) {
            const double w = (m == m2) ? dkuu(m, m) : dkuu(m, m2) + dkuu(m2, m);
            if (w == 0.0) continue;

            double expo = 0.0;
            for (Eigen::Index j = 0; j < bs.dims; ++j) {
                const double d = u.inputs(m, j) - u.inputs(m2, j);
                expo -= 0.5 * d * d / ls2_s[j];
            }
            const double ks = p.shared.variance * std::exp(expo);
            out.dvar_shared += w * ks / p.shared.variance;
            for (Eigen::Index j = 0; j < bs.dims; ++j) {
                const double d = u.inputs(m, j) - u.inputs(m2, j);
                const double g = w * ks * d / ls2_s[j];
                out.dinducing(m, j) -= g;
                out.dinducing(m2, j) += g;
                out.dls2_shared[j] += w * ks * 0.5 * d * d / (ls2_s[j] * ls2_s[j]);
            }

            if (p.has_private() &&
                u.labels[static_cast<std::size_t>(m)] == u.labels[static_cast<std::size_t>(m2)]) {
                double expo_p = 0.0;
                for (Eigen::Index j = 0; j < bp.dims; ++j) {
                    const Eigen::Index col = bp.offset + j;
                    const double d = u.inputs(m, col) - u.inputs(m2, col);
                    expo_p -= 0.5 * d * d / ls2_p[j];
                }
                const double kp = p.priv.variance * std::exp(expo_p);
                out.dvar_private += w * kp / p.priv.variance;
                for (Eigen::Index j = 0; j < bp.dims; ++j) {
                    const Eigen::Index col = bp.offset + j;
                    const double d = u.inputs(m, col) - u.inputs(m2, col);
                    const double g = w * kp * d / ls2_p[j];
                    out.dinducing(m, col) -= g;
                    out.dinducing(m2, col) += g;
                    out.dls2_private[j] += w * kp * 0.5 * d * d / (ls2_p[j] * ls2_p[j]);
                }
            }
        }
    }

    // Diagonal jitter is jitter_rel times the composite prior variance.
    if (jitter_rel != 0.0) {
        const double trace_w = dkuu.diagonal().sum();
        out.dvar_shared += trace_w * jitter_rel;
        if (p.has_private()) out.dvar_private += trace_w * jitter_rel;
    }
}

}  // namespace sclvm
