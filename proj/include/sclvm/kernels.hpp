#ifndef SCLVM_KERNELS_HPP
#define SCLVM_KERNELS_HPP

#include "sclvm/common.hpp"

#include <Eigen/Cholesky>

#include <vector>

namespace sclvm {

/// Opaque category id in {1..C}. Only equality matters.
struct CategoryLabel {
    int id = 0;
    friend bool operator==(CategoryLabel a, CategoryLabel b) { return a.id == b.id; }
    friend bool operator!=(CategoryLabel a, CategoryLabel b) { return a.id != b.id; }
};

/// A latent location split into its shared and private coordinates.
struct LatentPoint {
    Vector shared;   // length Q_s
    Vector priv;     // length Q_p
    CategoryLabel label;
};

/// Exponentiated quadratic kernel with per-dimension (ARD) lengthscales:
///   k(a, b) = variance * exp(-1/2 * sum_q (a_q - b_q)^2 / ls_q^2)
struct EqKernelParams {
    double variance = 1.0;
    Vector lengthscales;

    void validate(const char* what) const;
    Eigen::Index dims() const { return lengthscales.size(); }
};

/// Full covariance configuration: shared kernel, private kernel, and the
/// observation noise variance. A zero-dimensional private kernel disables
/// the private term entirely (the label-blind degenerate configuration).
struct KernelParams {
    EqKernelParams shared;
    EqKernelParams priv;
    double noise_variance = 0.1;

    void validate() const;
    bool has_private() const { return priv.dims() > 0; }
    /// Composite self-covariance k(x, x); every Gram diagonal entry equals this.
    double diag_value() const { return shared.variance + (has_private() ? priv.variance : 0.0); }
};

/// Shared-space kernel value k_s(a, b).
double eval_shared(const Vector& a, const Vector& b, const EqKernelParams& p);

/// Private-space kernel value: k'(a.priv, b.priv) when the labels agree,
/// exactly 0 otherwise. Zero-dimensional private coordinates give 0.
double eval_private(const LatentPoint& a, const LatentPoint& b, const EqKernelParams& p);

/// Composite covariance k_s + gated k'.
double eval_composite(const LatentPoint& a, const LatentPoint& b, const KernelParams& p);

/// Symmetric Gram matrix of the composite kernel with `jitter` added to the
/// diagonal.
Matrix gram(const std::vector<LatentPoint>& points, const KernelParams& p, double jitter);

/// Gram matrix over the rows of a packed latent matrix (first q_shared
/// columns shared, the rest private) with one label per row.
Matrix gram_rows(const Matrix& points, const std::vector<CategoryLabel>& labels, int q_shared,
                 const KernelParams& p, double jitter);

/// Gram matrix of the gated private kernel alone (block diagonal once rows
/// are sorted by label).
Matrix gram_private(const std::vector<LatentPoint>& points, const EqKernelParams& p);

/// Diagonal loading policy for Cholesky factorizations: start from
/// base_rel * mean(diagonal), grow by `growth` on failure, give up past
/// max_rel * mean(diagonal).
struct JitterPolicy {
    double base_rel = 1e-6;
    double growth = 10.0;
    double max_rel = 1e-2;
};

struct CholeskyResult {
    Eigen::LLT<Matrix> llt;
    double jitter_added = 0.0;  // extra loading beyond what the matrix already carried
};

/// Factorize a symmetric positive (semi)definite matrix, escalating diagonal
/// loading per `policy` when the plain factorization fails. Throws
/// numerical_error with diagnostics once the ceiling is reached.
CholeskyResult cholesky_with_jitter(const Matrix& sym, const JitterPolicy& policy, const char* what);

inline double log_det_from_llt(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace sclvm

#endif
