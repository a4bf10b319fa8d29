#ifndef SCLVM_BOUND_HPP
#define SCLVM_BOUND_HPP

#include "sclvm/kernels.hpp"
#include "sclvm/psi.hpp"

#include <string>
#include <vector>

namespace sclvm {

struct LatentConfig {
    Eigen::Index q_shared = 0;
    Eigen::Index q_private = 0;
    Eigen::Index n_inducing = 0;

    Eigen::Index q_total() const { return q_shared + q_private; }
    void validate() const;
};

/// Identity and standardization of the dataset a state was fit to. Carried
/// for persistence and diagnostics; the bound itself never reads it.
struct DatasetRef {
    std::string digest;
    Vector offset;
    Vector scale;
};

struct ModelState {
    VariationalPosterior q;
    InducingSet u;
    KernelParams kernel;
    LatentConfig config;
    std::vector<CategoryLabel> labels;  // per training point
    JitterPolicy numerics;
    DatasetRef data_ref;

    void validate() const;
};

struct BoundReport {
    double elbo = 0.0;
    Vector data_fit_terms;  // per-dimension collapsed bound values
    double kl = 0.0;
    double trace_term = 0.0;    // D*beta/2 * (tr(Kuu^-1 Psi2) - psi0)
    double log_det_term = 0.0;  // D/2 * (log|Kuu| - log|A|)
};

double kl_to_prior(const VariationalPosterior& q);

/// Per-dimension collapsed bound. Factorizes kuu and (psi2/noise + kuu)
/// internally with the default jitter policy; never forms an N x N matrix.
double f_tilde(const Vector& y_d, const PsiStats& stats, const Matrix& kuu,
               double noise_variance);

BoundReport elbo(const Matrix& y, const ModelState& state);

/// Gradients of the evidence lower bound on the optimization scale:
/// log variances, log lengthscales, log kernel variances, log noise.
struct ElboGradient {
    BoundReport report;
    Matrix dmeans;          // N x Q
    Matrix dlog_variances;  // N x Q
    Matrix dinducing;       // M x Q
    Vector dlog_ls_shared;
    Vector dlog_ls_private;
    double dlog_var_shared = 0.0;
    double dlog_var_private = 0.0;
    double dlog_noise = 0.0;
};

ElboGradient elbo_gradient(const Matrix& y, const ModelState& state);

/// Flat parameter vector layout, shared by the optimizers and the
/// finite-difference checks:
///   [means, log variances, inducing inputs, log shared lengthscales,
///    log shared variance, log private lengthscales, log private variance,
///    log noise variance]
/// Matrices are column-major. The private variance slot is always present;
/// with no private dimensions its gradient is exactly zero.
Eigen::Index packed_size(const ModelState& state);
Vector pack_parameters(const ModelState& state);
void unpack_parameters(const Vector& theta, ModelState& state);
Vector pack_gradient(const ElboGradient& g, const ModelState& state);

/// Cached per-training-set quantities that let a held-out point be scored
/// without revisiting the training data.
struct TrainingSummaries {
    Matrix psi2;    // M x M
    Matrix b;       // M x D, psi1^T Y
    double psi0 = 0.0;
    double y_norm2 = 0.0;
    Eigen::Index n_points = 0;
    Eigen::Index n_dims = 0;
    double f_total = 0.0;  // sum of data_fit_terms at the trained state
};

TrainingSummaries summarize_training(const Matrix& y, const ModelState& state);

/// Collapsed bound of the training set augmented with one labeled point,
/// reported as the gain over the cached training bound minus the KL cost of
/// the point's posterior. Gradients are with respect to the point's
/// posterior only.
struct AugmentedPointBound {
    double bound_delta = 0.0;
    Vector dmean;          // Q
    Vector dlog_variance;  // Q
};

AugmentedPointBound augmented_point_bound(const TrainingSummaries& tr, const ModelState& state,
                                          const Vector& y_star, CategoryLabel label,
                                          const Vector& mean_star, const Vector& var_star,
                                          bool with_gradients);

}  // namespace sclvm

#endif
