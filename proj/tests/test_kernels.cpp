#include <doctest.h>

#include "helpers.hpp"

#include <Eigen/LU>

using namespace sclvm;
using namespace sclvm::testing;

namespace {

KernelParams sample_params(Eigen::Index q_s, Eigen::Index q_p, std::uint64_t seed) {
    Rng rng(seed);
    KernelParams p;
    p.shared.variance = rng.uniform(0.5, 2.0);
    p.shared.lengthscales = Vector::NullaryExpr(q_s, [&rng]() { return rng.uniform(0.5, 2.0); });
    p.priv.variance = rng.uniform(0.5, 2.0);
    p.priv.lengthscales = Vector::NullaryExpr(q_p, [&rng]() { return rng.uniform(0.5, 2.0); });
    p.noise_variance = 0.1;
    return p;
}

}  // namespace

TEST_CASE("shared kernel matches the ARD closed form") {
    Rng rng(11);
    const auto p = sample_params(3, 2, 12);
    for (int i = 0; i < 20; ++i) {
        const Vector a = rng.normal_vector(3);
        const Vector b = rng.normal_vector(3);
        double expo = 0.0;
        for (Eigen::Index j = 0; j < 3; ++j) {
            const double d = a[j] - b[j];
            expo -= 0.5 * d * d / (p.shared.lengthscales[j] * p.shared.lengthscales[j]);
        }
        CHECK(eval_shared(a, b, p.shared) ==
              doctest::Approx(p.shared.variance * std::exp(expo)).epsilon(1e-14));
    }
}

TEST_CASE("kernel at identical inputs returns the variance") {
    const auto p = sample_params(2, 2, 5);
    Rng rng(6);
    const Vector a = rng.normal_vector(2);
    CHECK(eval_shared(a, a, p.shared) == doctest::Approx(p.shared.variance).epsilon(1e-15));
}

TEST_CASE("large lengthscales make a dimension irrelevant") {
    EqKernelParams p;
    p.variance = 1.0;
    p.lengthscales = Vector::Constant(2, 1.0);
    p.lengthscales[1] = 1e8;
    Vector a(2), b(2);
    a << 0.3, -5.0;
    b << 0.3, 7.0;
    CHECK(eval_shared(a, b, p) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("private kernel is exactly zero across labels") {
    const auto p = sample_params(2, 2, 21);
    Rng rng(22);
    LatentPoint a{rng.normal_vector(2), rng.normal_vector(2), CategoryLabel{1}};
    LatentPoint b{rng.normal_vector(2), rng.normal_vector(2), CategoryLabel{2}};
    CHECK(eval_private(a, b, p.priv) == 0.0);
    CHECK(eval_composite(a, b, p) == eval_shared(a.shared, b.shared, p.shared));
    b.label = CategoryLabel{1};
    CHECK(eval_private(a, b, p.priv) > 0.0);
    CHECK(eval_composite(a, b, p) ==
          doctest::Approx(eval_shared(a.shared, b.shared, p.shared) +
                          eval_private(a, b, p.priv))
              .epsilon(1e-15));
}

TEST_CASE("zero private dimensions disable the private term") {
    KernelParams p = sample_params(2, 0, 31);
    CHECK_FALSE(p.has_private());
    Rng rng(32);
    LatentPoint a{rng.normal_vector(2), Vector(0), CategoryLabel{1}};
    LatentPoint b{rng.normal_vector(2), Vector(0), CategoryLabel{1}};
    CHECK(eval_private(a, b, p.priv) == 0.0);
    CHECK(eval_composite(a, b, p) == eval_shared(a.shared, b.shared, p.shared));
    CHECK(p.diag_value() == p.shared.variance);
}

TEST_CASE("gram matrices are symmetric with the loaded diagonal") {
    const auto st = random_state(7, 5, 2, 2, 3, 41);
    const double jitter = 1e-5;
    const Matrix k = gram_rows(st.u.inputs, st.u.labels, 2, st.kernel, jitter);
    CHECK(k.rows() == 5);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index i = 0; i < k.rows(); ++i)
        CHECK(k(i, i) == doctest::Approx(st.kernel.diag_value() + jitter).epsilon(1e-15));

    const auto pts = to_points(st.u.inputs, st.u.labels, 2);
    const Matrix k2 = gram(pts, st.kernel, jitter);
    CHECK((k - k2).cwiseAbs().maxCoeff() == 0.0);

    // Entry-by-entry against the scalar evaluator.
    for (Eigen::Index i = 0; i < k.rows(); ++i)
        for (Eigen::Index j = 0; j < k.cols(); ++j) {
            const double expect = eval_composite(pts[static_cast<std::size_t>(i)],
                                                 pts[static_cast<std::size_t>(j)], st.kernel) +
                                  (i == j ? jitter : 0.0);
            CHECK(k(i, j) == doctest::Approx(expect).epsilon(1e-14));
        }
}

TEST_CASE("gram_private is zero off the label blocks") {
    const auto st = random_state(6, 6, 2, 2, 2, 51);
    const auto pts = to_points(st.u.inputs, st.u.labels, 2);
    const Matrix kp = gram_private(pts, st.kernel.priv);
    for (Eigen::Index i = 0; i < kp.rows(); ++i)
        for (Eigen::Index j = 0; j < kp.cols(); ++j) {
            if (st.u.labels[static_cast<std::size_t>(i)] !=
                st.u.labels[static_cast<std::size_t>(j)])
                CHECK(kp(i, j) == 0.0);
            else
                CHECK(kp(i, j) > 0.0);
        }
}

TEST_CASE("well conditioned matrices factor without added jitter") {
    const auto st = random_state(6, 6, 2, 2, 2, 61);
    const Matrix k = gram_rows(st.u.inputs, st.u.labels, 2, st.kernel, 0.0);
    const auto res = cholesky_with_jitter(k, JitterPolicy{}, "test");
    CHECK(res.jitter_added == 0.0);
    // log-determinant agrees with a direct dense evaluation.
    const double direct = std::log(k.determinant());
    CHECK(log_det_from_llt(res.llt) == doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("rank deficient matrices escalate jitter instead of failing") {
    // Two identical inducing points make the Gram exactly singular.
    Matrix inputs(3, 2);
    inputs << 0.0, 0.0, 0.0, 0.0, 1.0, -1.0;
    std::vector<CategoryLabel> labels(3, CategoryLabel{1});
    KernelParams p = sample_params(2, 0, 71);
    const Matrix k = gram_rows(inputs, labels, 2, p, 0.0);
    const auto res = cholesky_with_jitter(k, JitterPolicy{}, "test");
    CHECK(res.jitter_added > 0.0);
    CHECK(std::isfinite(log_det_from_llt(res.llt)));
}

TEST_CASE("jitter escalation gives up at the ceiling") {
    Matrix bad = -Matrix::Identity(3, 3);
    CHECK_THROWS_AS(cholesky_with_jitter(bad, JitterPolicy{}, "test"), numerical_error);
}

TEST_CASE("parameter validation rejects non-positive values") {
    KernelParams p = sample_params(2, 2, 81);
    CHECK_NOTHROW(p.validate());
    KernelParams bad = p;
    bad.shared.variance = 0.0;
    CHECK_THROWS_AS(bad.validate(), contract_error);
    bad = p;
    bad.priv.lengthscales[0] = -1.0;
    CHECK_THROWS_AS(bad.validate(), contract_error);
    bad = p;
    bad.noise_variance = 0.0;
    CHECK_THROWS_AS(bad.validate(), contract_error);
}
