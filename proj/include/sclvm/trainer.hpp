#ifndef SCLVM_TRAINER_HPP
#define SCLVM_TRAINER_HPP

#include "sclvm/bound.hpp"
#include "sclvm/dataio.hpp"
#include "sclvm/optim.hpp"

#include <string>
#include <vector>

namespace sclvm {

struct FitOptions {
    enum class Optimizer { adam, lbfgs };
    int max_iters = 3000;
    Optimizer optimizer = Optimizer::adam;
    double step_size = 1e-2;
    double convergence_tol = 1e-7;
    std::uint64_t seed = 1;
    bool fixed_inducing_labels = true;  // v1 contract; labels are never optimized
    JitterPolicy numerics;

    void validate() const;
};

/// Options for the per-point posterior optimization at test time.
struct InferOptions {
    int max_iters = 200;
    double step_size = 5e-2;
    double convergence_tol = 1e-6;
    int patience = 10;
};

/// Everything needed to score, sample, and export after training.
struct TrainedModel {
    ModelState state;
    TrainingSummaries summaries;
    std::vector<std::string> label_values;   // id c -> label_values[c-1]
    std::vector<std::string> feature_names;
    std::vector<Eigen::Index> class_counts;  // per id, from the training set
    double final_elbo = 0.0;

    int category_count() const { return static_cast<int>(label_values.size()); }
    Standardization standardization() const;
    void validate() const;
};

/// Deterministic starting state: PCA latents (top components to the shared
/// block), 0.1 posterior variances, per-category k-means inducing points
/// with sqrt-count quotas (minimum 2), unit kernels, noise at a tenth of
/// the mean column variance.
ModelState initialize(const Dataset& data, const LatentConfig& config, std::uint64_t seed);

struct FitResult {
    TrainedModel model;
    std::vector<double> trace;  // ELBO, starting value first
    bool converged = false;
};

FitResult fit(const Dataset& data, const LatentConfig& config, const FitOptions& opts);

struct TestLatent {
    Vector mean;
    Vector variance;
    double bound_delta = 0.0;
};

/// Optimize a fresh single-point posterior under the hypothesized label
/// with all global parameters frozen; returns the best of two deterministic
/// warm starts. y_star is in original data units.
TestLatent infer_test_latent(const Vector& y_star, CategoryLabel hypothesis,
                             const TrainedModel& model, const InferOptions& opts = {});

struct ClassScore {
    CategoryLabel label;
    double bound = 0.0;  // bound_delta for this hypothesis
    double log_prior = 0.0;
    double posterior_prob = 0.0;
};

/// Per-class bound deltas plus log priors through a softmax; the argmax
/// entry comes first, remaining classes in label order.
std::vector<ClassScore> classify(const Vector& y_star, const TrainedModel& model,
                                 const Vector& class_log_priors, const InferOptions& opts = {});

/// log(class frequency) from the training counts.
Vector default_log_priors(const TrainedModel& model);

/// Draw n observations for a category: latent prior draw, sparse predictive
/// at the inducing representation, observation noise, then the inverse of
/// the training standardization. Deterministic given seed.
Matrix generate(const TrainedModel& model, CategoryLabel label, Eigen::Index n,
                std::uint64_t seed);

}  // namespace sclvm

#endif
