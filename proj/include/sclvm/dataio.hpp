#ifndef SCLVM_DATAIO_HPP
#define SCLVM_DATAIO_HPP

#include "sclvm/kernels.hpp"

#include <string>
#include <utility>
#include <vector>

namespace sclvm {

/// Labeled observation matrix. Label ids are 1..category_count in first
/// appearance order; label_values keeps the original text of each id.
/// The true_* matrices are only filled by the synthetic generator.
struct Dataset {
    Matrix y;  // N x D
    std::vector<CategoryLabel> labels;
    int category_count = 0;
    std::string name;
    std::vector<std::string> label_values;   // size category_count
    std::vector<std::string> feature_names;  // size D
    Matrix true_shared;
    Matrix true_private;

    Eigen::Index n_points() const { return y.rows(); }
    Eigen::Index n_dims() const { return y.cols(); }
    std::vector<Eigen::Index> class_counts() const;
    void validate() const;
};

struct Standardization {
    Vector mean;   // per column
    Vector scale;  // per column, > 0

    Matrix apply(const Matrix& y) const;
    Matrix invert(const Matrix& y) const;
    Vector apply_row(const Vector& row) const;
    Vector invert_row(const Vector& row) const;
};

/// Parse a headered CSV. `label_column` is matched against header names
/// first; an all-digit string that matches no header is a 0-based index.
Dataset load_csv(const std::string& path, const std::string& label_column);

/// Parse a headered CSV with no label column: every column is a feature and
/// all rows get the placeholder label 1. Zero data rows are allowed.
Dataset load_csv_features_only(const std::string& path);

void save_csv(const Dataset& d, const std::string& path);

/// Column-wise zero-mean unit-scale transform (population standard
/// deviation). Zero-variance columns keep scale 1 and emit a warning.
std::pair<Dataset, Standardization> standardize(const Dataset& d);

/// Deterministic train/test split with controlled imbalance: train keeps
/// `minority_fraction` of every non-majority class and at most
/// `majority_cap` majority rows; test receives the remaining minority rows
/// plus a majority sample capped at `test_majority_cap` (negative: all
/// remaining). Throws data_error if any class ends up empty on either side.
std::pair<Dataset, Dataset> imbalanced_split(const Dataset& d, Eigen::Index majority_cap,
                                             double minority_fraction, std::uint64_t seed,
                                             Eigen::Index test_majority_cap = -1);

/// Two-class benchmark: both classes share one latent subspace; each class
/// adds a private subspace draw around a class-specific mean (+/- offset on
/// every private coordinate, scaled to keep the total offset norm fixed).
/// Codes map through independent random tanh networks, the shared path with
/// twice the output gain of the private path, plus observation noise.
Dataset synth_shared_private(Eigen::Index n_major, Eigen::Index n_minor, Eigen::Index q_s,
                             Eigen::Index q_p, Eigen::Index d, double offset,
                             std::uint64_t seed);

/// Compact binary container (magic "SCLD").
void save_scld(const Dataset& d, const std::string& path);
Dataset load_scld(const std::string& path);

}  // namespace sclvm

#endif
