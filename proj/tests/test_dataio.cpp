#include <doctest.h>

#include "sclvm/dataio.hpp"

#include <cstdio>
#include <fstream>
#include <set>

using namespace sclvm;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name, const std::string& content = "")
        : path("dataio_test_" + name) {
        if (!content.empty()) {
            std::ofstream out(path);
            out << content;
        }
    }
    ~TempFile() { std::remove(path.c_str()); }
};

Dataset tiny() {
    Dataset d;
    d.y.resize(4, 2);
    d.y << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0;
    d.labels = {CategoryLabel{1}, CategoryLabel{2}, CategoryLabel{1}, CategoryLabel{2}};
    d.category_count = 2;
    d.label_values = {"x", "y"};
    d.feature_names = {"a", "b"};
    d.name = "tiny";
    return d;
}

}  // namespace

TEST_CASE("csv loading maps labels in first appearance order") {
    TempFile f("basic.csv",
               "height,label,width\n"
               "1.5,cat,2.5\n"
               "3.25,dog,4.0\n"
               "-1e-3,cat,0.125\n");
    const Dataset d = load_csv(f.path, "label");
    CHECK(d.n_points() == 3);
    CHECK(d.n_dims() == 2);
    CHECK(d.feature_names == std::vector<std::string>{"height", "width"});
    CHECK(d.label_values == std::vector<std::string>{"cat", "dog"});
    CHECK(d.labels[0].id == 1);
    CHECK(d.labels[1].id == 2);
    CHECK(d.labels[2].id == 1);
    CHECK(d.y(0, 0) == 1.5);
    CHECK(d.y(2, 1) == 0.125);
    CHECK(d.class_counts() == std::vector<Eigen::Index>{2, 1});
}

TEST_CASE("a numeric label column name falls back to a column index") {
    TempFile f("idx.csv", "c0,c1\n1.0,alpha\n2.0,beta\n");
    const Dataset d = load_csv(f.path, "1");
    CHECK(d.label_values == std::vector<std::string>{"alpha", "beta"});
    CHECK(d.feature_names == std::vector<std::string>{"c0"});
}

TEST_CASE("csv errors carry row and column context") {
    TempFile missing("missing.csv");
    CHECK_THROWS_AS(load_csv("definitely_not_here.csv", "label"), data_error);

    TempFile ragged("ragged.csv", "a,label\n1.0,x\n2.0\n");
    CHECK_THROWS_AS(load_csv(ragged.path, "label"), data_error);

    TempFile nonnum("nonnum.csv", "a,label\noops,x\n");
    CHECK_THROWS_AS(load_csv(nonnum.path, "label"), data_error);

    TempFile nolabel("nolabel.csv", "a,b\n1.0,2.0\n");
    CHECK_THROWS_AS(load_csv(nolabel.path, "label"), data_error);
}

TEST_CASE("csv round trips preserve every value") {
    const Dataset d = tiny();
    TempFile f("round.csv");
    save_csv(d, f.path);
    const Dataset back = load_csv(f.path, "label");
    CHECK(back.y == d.y);
    CHECK(back.label_values == d.label_values);
    CHECK(back.feature_names == d.feature_names);
    for (std::size_t i = 0; i < d.labels.size(); ++i)
        CHECK(back.labels[i].id == d.labels[i].id);
}

TEST_CASE("features only loading accepts zero rows") {
    TempFile f("feat.csv", "a,b,c\n");
    const Dataset d = load_csv_features_only(f.path);
    CHECK(d.n_points() == 0);
    CHECK(d.n_dims() == 3);
    TempFile g("feat2.csv", "a,b\n1.0,2.0\n");
    const Dataset e = load_csv_features_only(g.path);
    CHECK(e.n_points() == 1);
    CHECK(e.labels[0].id == 1);
}

TEST_CASE("standardization centers, scales, and inverts") {
    Dataset d = tiny();
    const auto [sd, st] = standardize(d);
    for (Eigen::Index c = 0; c < sd.y.cols(); ++c) {
        CHECK(std::fabs(sd.y.col(c).mean()) < 1e-12);
        CHECK(sd.y.col(c).squaredNorm() / 4.0 == doctest::Approx(1.0).epsilon(1e-12));
    }
    const Matrix restored = st.invert(sd.y);
    CHECK((restored - d.y).cwiseAbs().maxCoeff() < 1e-12);
    const Vector row = st.apply_row(d.y.row(1).transpose());
    CHECK((row - sd.y.row(1).transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((st.invert_row(row) - d.y.row(1).transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero variance columns keep unit scale") {
    Dataset d = tiny();
    d.y.col(1).setConstant(5.0);
    const auto [sd, st] = standardize(d);
    CHECK(st.scale[1] == 1.0);
    CHECK(sd.y.col(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("imbalanced split keeps counts, order, and disjointness") {
    Rng rng(99);
    Dataset d;
    d.y = rng.normal_matrix(60, 3);
    d.labels.resize(60);
    for (int i = 0; i < 60; ++i) d.labels[static_cast<std::size_t>(i)] = {i < 40 ? 1 : 2};
    d.category_count = 2;
    d.label_values = {"big", "small"};
    d.name = "split";

    const auto [train, test] = imbalanced_split(d, 30, 0.5, 7);
    const auto tc = train.class_counts();
    CHECK(tc[0] == 30);  // capped majority
    CHECK(tc[1] == 10);  // half the minority
    const auto ec = test.class_counts();
    CHECK(ec[0] == 10);
    CHECK(ec[1] == 10);

    // Row payloads are disjoint and every original row lands on one side.
    auto key = [](const Dataset& ds, Eigen::Index r) {
        return std::to_string(ds.y(r, 0)) + "," + std::to_string(ds.y(r, 1));
    };
    std::set<std::string> seen;
    for (Eigen::Index r = 0; r < train.n_points(); ++r) seen.insert(key(train, r));
    for (Eigen::Index r = 0; r < test.n_points(); ++r) {
        CHECK(seen.count(key(test, r)) == 0);
        seen.insert(key(test, r));
    }
    CHECK(seen.size() == 60);

    // Same seed reproduces the split exactly; another seed moves rows.
    const auto [train2, test2] = imbalanced_split(d, 30, 0.5, 7);
    CHECK(train2.y == train.y);
    const auto [train3, test3] = imbalanced_split(d, 30, 0.5, 8);
    CHECK(train3.y != train.y);
}

TEST_CASE("test majority cap limits the held out majority sample") {
    Rng rng(100);
    Dataset d;
    d.y = rng.normal_matrix(50, 2);
    d.labels.resize(50);
    for (int i = 0; i < 50; ++i) d.labels[static_cast<std::size_t>(i)] = {i < 40 ? 1 : 2};
    d.category_count = 2;
    d.label_values = {"a", "b"};
    const auto [train, test] = imbalanced_split(d, 20, 0.5, 3, 5);
    CHECK(test.class_counts()[0] == 5);
    CHECK(test.class_counts()[1] == 5);
}

TEST_CASE("splits that empty a class are rejected") {
    Rng rng(101);
    Dataset d;
    d.y = rng.normal_matrix(10, 2);
    d.labels.assign(10, CategoryLabel{1});
    d.labels[9] = CategoryLabel{2};
    d.category_count = 2;
    d.label_values = {"a", "b"};
    // The single minority row cannot be on both sides.
    CHECK_THROWS_AS(imbalanced_split(d, 5, 1.0, 1), data_error);
}

TEST_CASE("the synthetic generator records its ground truth") {
    const Dataset d = synth_shared_private(30, 10, 2, 3, 8, 2.0, 11);
    CHECK(d.n_points() == 40);
    CHECK(d.n_dims() == 8);
    CHECK(d.category_count == 2);
    CHECK(d.label_values == std::vector<std::string>{"neg", "pos"});
    CHECK(d.class_counts() == std::vector<Eigen::Index>{30, 10});
    CHECK(d.true_shared.rows() == 40);
    CHECK(d.true_shared.cols() == 2);
    CHECK(d.true_private.cols() == 3);
    CHECK(d.y.allFinite());

    // Private codes separate by class around +/- the offset direction.
    double major_mean = 0.0, minor_mean = 0.0;
    for (Eigen::Index i = 0; i < 30; ++i) major_mean += d.true_private.row(i).sum();
    for (Eigen::Index i = 30; i < 40; ++i) minor_mean += d.true_private.row(i).sum();
    CHECK(major_mean / 30.0 < 0.0);
    CHECK(minor_mean / 10.0 > 0.0);

    const Dataset d2 = synth_shared_private(30, 10, 2, 3, 8, 2.0, 11);
    CHECK(d2.y == d.y);
    const Dataset d3 = synth_shared_private(30, 10, 2, 3, 8, 2.0, 12);
    CHECK(d3.y != d.y);
}

TEST_CASE("scld container round trips bit for bit") {
    const Dataset d = tiny();
    TempFile f("round.scld");
    save_scld(d, f.path);
    const Dataset back = load_scld(f.path);
    CHECK(back.y == d.y);
    CHECK(back.label_values == d.label_values);
    CHECK(back.feature_names == d.feature_names);
    CHECK(back.category_count == d.category_count);
    for (std::size_t i = 0; i < d.labels.size(); ++i)
        CHECK(back.labels[i].id == d.labels[i].id);

    TempFile bad("bad.scld", "not a container");
    CHECK_THROWS_AS(load_scld(bad.path), data_error);
}
