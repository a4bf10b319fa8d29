#include "sclvm/trainer.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>

namespace sclvm {

void FitOptions::validate() const {
    require(max_iters >= 1, "max_iters must be at least 1");
    require(step_size > 0.0, "step size must be positive");
    require(convergence_tol > 0.0, "convergence tolerance must be positive");
    require(fixed_inducing_labels, "inducing labels are fixed in this version");
}

Standardization TrainedModel::standardization() const {
    return Standardization{state.data_ref.offset, state.data_ref.scale};
}

void TrainedModel::validate() const {
    state.validate();
    require(static_cast<Eigen::Index>(class_counts.size()) ==
                static_cast<Eigen::Index>(label_values.size()),
            "class count per label value required");
    require(feature_names.empty() ||
                static_cast<Eigen::Index>(feature_names.size()) == state.data_ref.offset.size(),
            "feature names must match data dimension");
}

namespace {

// Deterministic Lloyd k-means with k-means++ seeding. k may exceed the
// number of distinct points; duplicate centroids are allowed (the jitter
// policy downstream absorbs them).
Matrix kmeans(const Matrix& pts, Eigen::Index k, Rng& rng) {
    const Eigen::Index n = pts.rows();
    const Eigen::Index q = pts.cols();
    require(n >= 1 && k >= 1, "kmeans needs points and clusters");
    Matrix centers(k, q);
    if (q == 0) return centers;

    centers.row(0) = pts.row(static_cast<Eigen::Index>(rng.uniform_index(
        static_cast<std::size_t>(n))));
    Vector d2 = (pts.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (Eigen::Index j = 1; j < k; ++j) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
                pick = i;
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n)));
        }
        centers.row(j) = pts.row(pick);
        d2 = d2.cwiseMin((pts.rowwise() - centers.row(j)).rowwise().squaredNorm());
    }

    std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), 0);
    Vector dist(n);
    for (int iter = 0; iter < 50; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            double best_d = (pts.row(i) - centers.row(0)).squaredNorm();
            for (Eigen::Index j = 1; j < k; ++j) {
                const double d = (pts.row(i) - centers.row(j)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            dist[i] = best_d;
            if (assign[static_cast<std::size_t>(i)] != best) {
                assign[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        // Re-seed empty clusters from the worst-fit point.
        std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
        for (auto a : assign) counts[static_cast<std::size_t>(a)]++;
        for (Eigen::Index j = 0; j < k; ++j) {
            if (counts[static_cast<std::size_t>(j)] > 0) continue;
            Eigen::Index worst = 0;
            dist.maxCoeff(&worst);
            counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(worst)])]--;
            assign[static_cast<std::size_t>(worst)] = j;
            counts[static_cast<std::size_t>(j)] = 1;
            dist[worst] = 0.0;
            changed = true;
        }
        centers.setZero();
        for (Eigen::Index i = 0; i < n; ++i)
            centers.row(assign[static_cast<std::size_t>(i)]) += pts.row(i);
        for (Eigen::Index j = 0; j < k; ++j)
            centers.row(j) /= static_cast<double>(counts[static_cast<std::size_t>(j)]);
        if (!changed && iter > 0) break;
    }
    return centers;
}

// sqrt-count quotas, minimum 2 per category, summing exactly to m.
std::vector<Eigen::Index> inducing_quotas(const std::vector<Eigen::Index>& counts,
                                          Eigen::Index m) {
    const auto c = static_cast<Eigen::Index>(counts.size());
    require(m >= 2 * c, "need at least two inducing points per category");
    std::vector<double> base(counts.size());
    double total_w = 0.0;
    for (auto n : counts) total_w += std::sqrt(static_cast<double>(n));
    std::vector<Eigen::Index> quota(counts.size());
    Eigen::Index assigned = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        base[i] = static_cast<double>(m) * std::sqrt(static_cast<double>(counts[i])) / total_w;
        quota[i] = std::max<Eigen::Index>(2, static_cast<Eigen::Index>(std::floor(base[i])));
        assigned += quota[i];
    }
    while (assigned < m) {
        // Largest fractional remainder first, earlier categories on ties.
        std::size_t pick = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < quota.size(); ++i) {
            const double frac = base[i] - static_cast<double>(quota[i]);
            if (frac > best) {
                best = frac;
                pick = i;
            }
        }
        quota[pick]++;
        assigned++;
    }
    while (assigned > m) {
        std::size_t pick = 0;
        Eigen::Index largest = -1;
        for (std::size_t i = 0; i < quota.size(); ++i) {
            if (quota[i] > 2 && quota[i] > largest) {
                largest = quota[i];
                pick = i;
            }
        }
        quota[pick]--;
        assigned--;
    }
    return quota;
}

std::string dataset_digest(const Dataset& d) {
    std::string bytes;
    bytes.reserve(static_cast<std::size_t>(d.y.size()) * sizeof(double) + d.labels.size() * 4);
    bytes.append(reinterpret_cast<const char*>(d.y.data()),
                 static_cast<std::size_t>(d.y.size()) * sizeof(double));
    for (const auto& l : d.labels) {
        const auto id = static_cast<std::uint32_t>(l.id);
        bytes.append(reinterpret_cast<const char*>(&id), sizeof(id));
    }
    return fnv1a_hex(bytes.data(), bytes.size());
}

ModelState initialize_standardized(const Dataset& sd, const Standardization& st,
                                   const LatentConfig& config, std::uint64_t seed,
                                   const JitterPolicy& numerics) {
    config.validate();
    sd.validate();
    const Eigen::Index n = sd.n_points();
    const Eigen::Index d = sd.n_dims();
    const Eigen::Index qq = config.q_total();
    require(n >= 2, "need at least two data points");
    require(d >= qq, "latent dimensionality exceeds feature count");
    require(sd.category_count >= 1, "data must carry labels");

    // Principal component scores of the standardized data, top components
    // routed to the shared block, each score column rescaled to unit
    // variance.
    const Matrix cov = (sd.y.transpose() * sd.y) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    require(eig.info() == Eigen::Success, "eigendecomposition of data covariance failed");
    Matrix components(d, qq);
    for (Eigen::Index j = 0; j < qq; ++j) {
        Vector v = eig.eigenvectors().col(d - 1 - j);
        Eigen::Index peak = 0;
        v.cwiseAbs().maxCoeff(&peak);
        if (v[peak] < 0.0) v = -v;
        components.col(j) = v;
    }
    Matrix scores = sd.y * components;
    for (Eigen::Index j = 0; j < qq; ++j) {
        const double sdv = std::sqrt(scores.col(j).array().square().mean());
        if (sdv > 1e-12) scores.col(j) /= sdv;
    }

    ModelState state;
    state.config = config;
    state.labels = sd.labels;
    state.numerics = numerics;
    state.q.means = std::move(scores);
    state.q.variances = Matrix::Constant(n, qq, 0.1);

    state.kernel.shared.variance = 1.0;
    state.kernel.shared.lengthscales = Vector::Ones(config.q_shared);
    state.kernel.priv.variance = 1.0;
    state.kernel.priv.lengthscales = Vector::Ones(config.q_private);
    state.kernel.noise_variance = 0.1 * sd.y.array().square().mean();

    // Inducing inputs: global k-means over the shared block, per-category
    // k-means over the private block, categories in id order.
    const auto counts = sd.class_counts();
    const auto quotas = inducing_quotas(counts, config.n_inducing);
    Rng rng(seed);
    Matrix shared_centers;
    if (config.q_shared > 0)
        shared_centers =
            kmeans(state.q.means.leftCols(config.q_shared), config.n_inducing, rng);

    state.u.inputs.resize(config.n_inducing, qq);
    state.u.labels.resize(static_cast<std::size_t>(config.n_inducing));
    Eigen::Index slot = 0;
    for (int c = 1; c <= sd.category_count; ++c) {
        const auto quota = quotas[static_cast<std::size_t>(c - 1)];
        Matrix private_centers;
        if (config.q_private > 0) {
            Matrix members(counts[static_cast<std::size_t>(c - 1)], config.q_private);
            Eigen::Index r = 0;
            for (Eigen::Index i = 0; i < n; ++i)
                if (sd.labels[static_cast<std::size_t>(i)].id == c)
                    members.row(r++) = state.q.means.row(i).tail(config.q_private);
            private_centers = kmeans(members, quota, rng);
        }
        for (Eigen::Index j = 0; j < quota; ++j, ++slot) {
            if (config.q_shared > 0)
                state.u.inputs.row(slot).head(config.q_shared) = shared_centers.row(slot);
            if (config.q_private > 0)
                state.u.inputs.row(slot).tail(config.q_private) = private_centers.row(j);
            state.u.labels[static_cast<std::size_t>(slot)] = CategoryLabel{c};
        }
    }

    state.data_ref.digest = dataset_digest(sd);
    state.data_ref.offset = st.mean;
    state.data_ref.scale = st.scale;
    state.validate();
    return state;
}

}  // namespace

ModelState initialize(const Dataset& data, const LatentConfig& config, std::uint64_t seed) {
    require(data.y.size() > 0, "dataset is empty");
    const Vector col_var =
        (data.y.rowwise() - data.y.colwise().mean()).array().square().colwise().mean();
    if (!(col_var.maxCoeff() > 0.0))
        throw data_error("every column has zero variance; nothing to model");
    auto [sd, st] = standardize(data);
    return initialize_standardized(sd, st, config, seed, JitterPolicy{});
}

FitResult fit(const Dataset& data, const LatentConfig& config, const FitOptions& opts) {
    opts.validate();
    require(data.y.size() > 0, "dataset is empty");
    const Vector col_var =
        (data.y.rowwise() - data.y.colwise().mean()).array().square().colwise().mean();
    if (!(col_var.maxCoeff() > 0.0))
        throw data_error("every column has zero variance; nothing to model");

    auto [sd, st] = standardize(data);
    ModelState state = initialize_standardized(sd, st, config, opts.seed, opts.numerics);
    const Matrix& y = sd.y;

    ModelState scratch = state;
    const Objective objective = [&](const Vector& theta, Vector& grad) -> double {
        unpack_parameters(theta, scratch);
        const ElboGradient g = elbo_gradient(y, scratch);
        grad = -pack_gradient(g, scratch);
        return -g.report.elbo;
    };

    OptimOptions oo;
    oo.max_iters = opts.max_iters;
    oo.step_size = opts.step_size;
    oo.convergence_tol = opts.convergence_tol;
    const Vector theta0 = pack_parameters(state);
    const OptimResult res = opts.optimizer == FitOptions::Optimizer::adam
                                ? adam_minimize(objective, theta0, oo)
                                : lbfgs_minimize(objective, theta0, oo);
    if (res.aborted)
        std::cerr << "warning: optimization aborted on numerical failure; "
                     "returning the best state visited\n";

    unpack_parameters(res.best_x, state);

    FitResult out;
    out.converged = res.converged;
    out.trace.reserve(res.trace.size());
    for (const double v : res.trace) out.trace.push_back(-v);
    out.model.state = std::move(state);
    out.model.summaries = summarize_training(y, out.model.state);
    out.model.label_values = data.label_values;
    out.model.feature_names = data.feature_names;
    out.model.class_counts = data.class_counts();
    out.model.final_elbo = -res.best_value;
    return out;
}

namespace {

// Frozen predictive pieces: mean(x) = k_x . c_scaled, and the variance
// solves reuse the two factorizations.
struct Predictor {
    Matrix c_scaled;  // M x D
    Eigen::LLT<Matrix> llt_k;
    Eigen::LLT<Matrix> llt_a;
    double k_self = 0.0;
};

Predictor make_predictor(const TrainedModel& model) {
    const ModelState& st = model.state;
    const double beta = 1.0 / st.kernel.noise_variance;
    Matrix raw = gram_rows(st.u.inputs, st.u.labels, static_cast<int>(st.config.q_shared),
                           st.kernel, 0.0);
    auto ck = cholesky_with_jitter(raw, st.numerics, "inducing gram");
    Matrix kuu = std::move(raw);
    kuu.diagonal().array() += ck.jitter_added;
    Matrix a = kuu + beta * model.summaries.psi2;
    auto ca = cholesky_with_jitter(a, st.numerics, "collapsed system");
    Predictor p;
    p.c_scaled = beta * ca.llt.solve(model.summaries.b);
    p.llt_k = std::move(ck.llt);
    p.llt_a = std::move(ca.llt);
    p.k_self = st.kernel.diag_value();
    return p;
}

// Composite covariance between one latent point (with label) and every
// inducing point.
Vector kernel_vector(const ModelState& st, const Vector& x, CategoryLabel label) {
    const Eigen::Index m = st.u.size();
    const Eigen::Index q_s = st.config.q_shared;
    Vector k(m);
    LatentPoint a;
    a.shared = x.head(q_s);
    a.priv = x.tail(st.config.q_private);
    a.label = label;
    LatentPoint b;
    for (Eigen::Index j = 0; j < m; ++j) {
        b.shared = st.u.inputs.row(j).head(q_s).transpose();
        b.priv = st.u.inputs.row(j).tail(st.config.q_private).transpose();
        b.label = st.u.labels[static_cast<std::size_t>(j)];
        k[j] = eval_composite(a, b, st.kernel);
    }
    return k;
}

bool label_in_inducing(const TrainedModel& model, CategoryLabel label) {
    for (const auto& l : model.state.u.labels)
        if (l == label) return true;
    return false;
}

}  // namespace

TestLatent infer_test_latent(const Vector& y_star, CategoryLabel hypothesis,
                             const TrainedModel& model, const InferOptions& opts) {
    model.validate();
    require(label_in_inducing(model, hypothesis),
            "hypothesis label has no inducing support in this model");
    const ModelState& st = model.state;
    const Eigen::Index qq = st.config.q_total();
    require(y_star.size() == st.data_ref.offset.size(), "test point dimension mismatch");

    const Vector ys = model.standardization().apply_row(y_star);

    // Warm start 1: centroid of the training posterior means of the class.
    Vector centroid = Vector::Zero(qq);
    Eigen::Index n_class = 0;
    for (Eigen::Index i = 0; i < st.q.n_points(); ++i) {
        if (st.labels[static_cast<std::size_t>(i)] == hypothesis) {
            centroid += st.q.means.row(i).transpose();
            ++n_class;
        }
    }
    if (n_class > 0) centroid /= static_cast<double>(n_class);

    // Warm start 2: the same-label inducing input whose predictive mean is
    // closest to the standardized observation.
    const Predictor pred = make_predictor(model);
    Vector best_z = centroid;
    double best_err = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < st.u.size(); ++j) {
        if (st.u.labels[static_cast<std::size_t>(j)] != hypothesis) continue;
        const Vector z = st.u.inputs.row(j).transpose();
        const Vector k = kernel_vector(st, z, hypothesis);
        const double err = (pred.c_scaled.transpose() * k - ys).squaredNorm();
        if (err < best_err) {
            best_err = err;
            best_z = z;
        }
    }

    OptimOptions oo;
    oo.max_iters = opts.max_iters;
    oo.step_size = opts.step_size;
    oo.convergence_tol = opts.convergence_tol;
    oo.patience = opts.patience;

    const Objective objective = [&](const Vector& xi, Vector& grad) -> double {
        const Vector mu = xi.head(qq);
        const Vector var = xi.tail(qq).array().exp();
        const auto apb =
            augmented_point_bound(model.summaries, st, ys, hypothesis, mu, var, true);
        grad.resize(2 * qq);
        grad.head(qq) = -apb.dmean;
        grad.tail(qq) = -apb.dlog_variance;
        return -apb.bound_delta;
    };

    TestLatent best;
    best.bound_delta = -std::numeric_limits<double>::infinity();
    for (const Vector& start : {centroid, best_z}) {
        Vector xi0(2 * qq);
        xi0.head(qq) = start;
        xi0.tail(qq).setConstant(std::log(0.1));
        const OptimResult res = adam_minimize(objective, xi0, oo);
        if (res.trace.empty()) continue;
        if (-res.best_value > best.bound_delta) {
            best.bound_delta = -res.best_value;
            best.mean = res.best_x.head(qq);
            best.variance = res.best_x.tail(qq).array().exp();
        }
    }
    if (!std::isfinite(best.bound_delta))
        throw numerical_error("test-point posterior optimization failed from both warm starts");
    return best;
}

Vector default_log_priors(const TrainedModel& model) {
    const auto c = static_cast<Eigen::Index>(model.class_counts.size());
    require(c >= 1, "model has no classes");
    Eigen::Index total = 0;
    for (auto n : model.class_counts) total += n;
    require(total > 0, "model has no training counts");
    Vector lp(c);
    for (Eigen::Index i = 0; i < c; ++i)
        lp[i] = std::log(static_cast<double>(model.class_counts[static_cast<std::size_t>(i)]) /
                         static_cast<double>(total));
    return lp;
}

std::vector<ClassScore> classify(const Vector& y_star, const TrainedModel& model,
                                 const Vector& class_log_priors, const InferOptions& opts) {
    const auto c = static_cast<Eigen::Index>(model.label_values.size());
    require(class_log_priors.size() == c, "one log prior per class required");
    require(class_log_priors.allFinite(), "log priors must be finite");

    std::vector<ClassScore> scores(static_cast<std::size_t>(c));
    Vector raw(c);
    for (Eigen::Index i = 0; i < c; ++i) {
        auto& sc = scores[static_cast<std::size_t>(i)];
        sc.label = CategoryLabel{static_cast<int>(i) + 1};
        sc.bound = infer_test_latent(y_star, sc.label, model, opts).bound_delta;
        sc.log_prior = class_log_priors[i];
        raw[i] = sc.bound + sc.log_prior;
    }
    const double top = raw.maxCoeff();
    const Vector expd = (raw.array() - top).exp();
    const double total = expd.sum();
    for (Eigen::Index i = 0; i < c; ++i)
        scores[static_cast<std::size_t>(i)].posterior_prob = expd[i] / total;

    Eigen::Index argmax = 0;
    raw.maxCoeff(&argmax);
    std::swap(scores[0], scores[static_cast<std::size_t>(argmax)]);
    std::sort(scores.begin() + 1, scores.end(),
              [](const ClassScore& a, const ClassScore& b) { return a.label.id < b.label.id; });
    return scores;
}

Matrix generate(const TrainedModel& model, CategoryLabel label, Eigen::Index n,
                std::uint64_t seed) {
    model.validate();
    require(n >= 0, "sample count must be nonnegative");
    require(label_in_inducing(model, label),
            "label has no inducing support in this model");
    const ModelState& st = model.state;
    const Eigen::Index d = model.summaries.n_dims;
    const Eigen::Index qq = st.config.q_total();
    Matrix out(n, d);
    if (n == 0) return out;

    const Predictor pred = make_predictor(model);
    const Standardization std_stats = model.standardization();
    Rng rng(seed);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector x = rng.normal_vector(qq);
        const Vector k = kernel_vector(st, x, label);
        const Vector mean = pred.c_scaled.transpose() * k;
        const double var_f = std::max(
            0.0, pred.k_self - k.dot(pred.llt_k.solve(k)) + k.dot(pred.llt_a.solve(k)));
        const double sd_y = std::sqrt(var_f + st.kernel.noise_variance);
        Vector row = mean + sd_y * rng.normal_vector(d);
        out.row(i) = std_stats.invert_row(row).transpose();
    }
    return out;
}

}  // namespace sclvm
