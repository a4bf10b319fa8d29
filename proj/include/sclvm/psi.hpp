#ifndef SCLVM_PSI_HPP
#define SCLVM_PSI_HPP

#include "sclvm/kernels.hpp"

#include <vector>

namespace sclvm {

/// Diagonal Gaussian posterior over latent locations, factorized across
/// points and dimensions. Columns are ordered shared-then-private.
struct VariationalPosterior {
    Matrix means;      // N x Q
    Matrix variances;  // N x Q, strictly positive

    Eigen::Index n_points() const { return means.rows(); }
    Eigen::Index n_dims() const { return means.cols(); }
    void validate() const;
};

/// Inducing inputs in the full latent space, one fixed category label each.
struct InducingSet {
    Matrix inputs;                      // M x Q, columns shared-then-private
    std::vector<CategoryLabel> labels;  // length M

    Eigen::Index size() const { return inputs.rows(); }
    void validate() const;
};

/// Kernel expectations under the variational posterior.
struct PsiStats {
    double psi0 = 0.0;  // sum_n E[k(x_n, x_n)]
    Matrix psi1;        // N x M, E[k(x_n, z_m)]
    Matrix psi2;        // M x M, sum_n E[k(x_n, z_m) k(x_n, z_m')]
};

/// Value-pass products kept for the gradient pass. phi_shared holds the
/// shared-kernel expectation factors, phi_private the label-gated private
/// factors; psi1 = phi_shared + phi_private.
struct PsiWorkspace {
    PsiStats stats;
    Matrix phi_shared;   // N x M
    Matrix phi_private;  // N x M (exact zeros where labels mismatch)
};

void compute_psi(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
                 const InducingSet& u, const KernelParams& p, PsiWorkspace& ws);

double psi0(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
            const KernelParams& p);
Matrix psi1(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
            const InducingSet& u, const KernelParams& p);
Matrix psi2(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
            const InducingSet& u, const KernelParams& p);

/// Monte-Carlo estimate of the psi statistics with per-entry standard
/// errors. Deterministic given the seed; intended as a verification oracle.
struct PsiMcResult {
    PsiStats stats;
    double psi0_se = 0.0;
    Matrix psi1_se;
    Matrix psi2_se;
};

PsiMcResult psi_mc_oracle(const VariationalPosterior& q, const std::vector<CategoryLabel>& labels,
                          const InducingSet& u, const KernelParams& p, std::int64_t n_samples,
                          std::uint64_t seed);

/// Adjoints of a scalar objective with respect to the psi statistics.
struct PsiUpstream {
    double dpsi0 = 0.0;
    Matrix dpsi1;  // N x M
    Matrix dpsi2;  // M x M, symmetric
};

/// Raw-scale gradient accumulators for everything the kernel expectations
/// and the inducing Gram matrix depend on. Lengthscale entries are
/// derivatives with respect to the squared lengthscales.
struct KernelGrad {
    Matrix dmeans;      // N x Q
    Matrix dvariances;  // N x Q (w.r.t. the variances themselves)
    Matrix dinducing;   // M x Q
    Vector dls2_shared;
    Vector dls2_private;
    double dvar_shared = 0.0;
    double dvar_private = 0.0;

    static KernelGrad zeros(Eigen::Index n, Eigen::Index m, Eigen::Index q_s, Eigen::Index q_p);
};

/// Chain the psi-statistic adjoints back to posterior, inducing, and kernel
/// parameters, adding into `out`.
void accumulate_psi_gradients(const PsiWorkspace& ws, const PsiUpstream& up,
                              const VariationalPosterior& q,
                              const std::vector<CategoryLabel>& labels, const InducingSet& u,
                              const KernelParams& p, KernelGrad& out);

/// Chain an adjoint of the inducing Gram matrix (including its relative
/// diagonal jitter, jitter_rel * mean-diagonal) back to inducing inputs and
/// kernel parameters.
void accumulate_gram_gradients(const Matrix& dkuu, const InducingSet& u, const KernelParams& p,
                               double jitter_rel, KernelGrad& out);

}  // namespace sclvm

#endif
