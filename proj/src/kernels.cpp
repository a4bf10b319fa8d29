#include "sclvm/kernels.hpp"

#include <cmath>
#include <sstream>

namespace sclvm {

void EqKernelParams::validate(const char* what) const {
    if (!(variance > 0.0) || !std::isfinite(variance))
        throw contract_error(std::string(what) + ": kernel variance must be positive");
    for (Eigen::Index q = 0; q < lengthscales.size(); ++q) {
        if (!(lengthscales(q) > 0.0) || !std::isfinite(lengthscales(q)))
            throw contract_error(std::string(what) + ": lengthscales must be positive");
    }
}

void KernelParams::validate() const {
    shared.validate("shared kernel");
    priv.validate("private kernel");
    if (!(noise_variance > 0.0) || !std::isfinite(noise_variance))
        throw contract_error("noise variance must be positive");
}

namespace {

double eq_kernel(const Vector& a, const Vector& b, const EqKernelParams& p) {
    double acc = 0.0;
    for (Eigen::Index q = 0; q < a.size(); ++q) {
        const double d = (a(q) - b(q)) / p.lengthscales(q);
        acc += d * d;
    }
    return p.variance * std::exp(-0.5 * acc);
}

}  // namespace

double eval_shared(const Vector& a, const Vector& b, const EqKernelParams& p) {
    require(a.size() == b.size() && a.size() == p.dims(),
            "eval_shared: dimension mismatch between inputs and lengthscales");
    return eq_kernel(a, b, p);
}

double eval_private(const LatentPoint& a, const LatentPoint& b, const EqKernelParams& p) {
    require(a.priv.size() == b.priv.size() && a.priv.size() == p.dims(),
            "eval_private: dimension mismatch between inputs and lengthscales");
    if (p.dims() == 0) return 0.0;
    if (a.label != b.label) return 0.0;
    return eq_kernel(a.priv, b.priv, p);
}

double eval_composite(const LatentPoint& a, const LatentPoint& b, const KernelParams& p) {
    return eval_shared(a.shared, b.shared, p.shared) + eval_private(a, b, p.priv);
}

Matrix gram(const std::vector<LatentPoint>& points, const KernelParams& p, double jitter) {
    require(!points.empty(), "gram: point list must be nonempty");
    require(jitter >= 0.0, "gram: jitter must be nonnegative");
    const Eigen::Index m = static_cast<Eigen::Index>(points.size());
    Matrix k(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double v = eval_composite(points[i], points[j], p);
            k(i, j) = v;
            k(j, i) = v;
        }
        k(i, i) += jitter;
    }
    return k;
}

Matrix gram_rows(const Matrix& points, const std::vector<CategoryLabel>& labels, int q_shared,
                 const KernelParams& p, double jitter) {
    require(points.rows() == static_cast<Eigen::Index>(labels.size()),
            "gram_rows: one label per row required");
    require(points.cols() == p.shared.dims() + p.priv.dims() && q_shared == p.shared.dims(),
            "gram_rows: latent dimensionality does not match kernel parameters");
    std::vector<LatentPoint> pts(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = points.row(static_cast<Eigen::Index>(i));
        pts[i].shared = row.head(q_shared).transpose();
        pts[i].priv = row.tail(points.cols() - q_shared).transpose();
        pts[i].label = labels[i];
    }
    return gram(pts, p, jitter);
}

Matrix gram_private(const std::vector<LatentPoint>& points, const EqKernelParams& p) {
    const Eigen::Index m = static_cast<Eigen::Index>(points.size());
    Matrix k(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double v = eval_private(points[i], points[j], p);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

CholeskyResult cholesky_with_jitter(const Matrix& sym, const JitterPolicy& policy, const char* what) {
    CholeskyResult out;
    out.llt.compute(sym);
    if (out.llt.info() == Eigen::Success) return out;

    const double mean_diag = sym.diagonal().mean();
    const double scale = mean_diag > 0.0 ? mean_diag : 1.0;
    double rel = policy.base_rel > 0.0 ? policy.base_rel : 1e-10;
    while (rel <= policy.max_rel) {
        const double jitter = rel * scale;
        Matrix loaded = sym;
        loaded.diagonal().array() += jitter;
        out.llt.compute(loaded);
        if (out.llt.info() == Eigen::Success) {
            out.jitter_added = jitter;
            return out;
        }
        rel *= policy.growth;
    }
    std::ostringstream msg;
    msg << "cholesky factorization of " << what << " failed after jitter escalation (size "
        << sym.rows() << ", mean diagonal " << mean_diag << ", max relative jitter "
        << policy.max_rel << ")";
    throw numerical_error(msg.str());
}

}  // namespace sclvm
