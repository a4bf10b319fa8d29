#include "sclvm/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace sclvm {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

double parse_cell(const std::string& cell, std::size_t row, std::size_t col,
                  const std::string& col_name) {
    if (cell.empty())
        throw data_error("missing value at row " + std::to_string(row) + ", column " +
                         std::to_string(col + 1) + " (" + col_name + ")");
    double value = 0.0;
    const char* first = cell.data();
    const char* last = first + cell.size();
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last)
        throw data_error("non-numeric value '" + cell + "' at row " + std::to_string(row) +
                         ", column " + std::to_string(col + 1) + " (" + col_name + ")");
    return value;
}

// Fisher-Yates with the pinned generator; returns a shuffled copy.
std::vector<Eigen::Index> shuffled(std::vector<Eigen::Index> v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = rng.uniform_index(i);
        std::swap(v[i - 1], v[j]);
    }
    return v;
}

Dataset take_rows(const Dataset& d, std::vector<Eigen::Index> rows, const char* suffix) {
    std::sort(rows.begin(), rows.end());
    Dataset out;
    out.y.resize(static_cast<Eigen::Index>(rows.size()), d.y.cols());
    out.labels.resize(rows.size());
    const bool has_truth = d.true_shared.rows() == d.y.rows();
    if (has_truth) {
        out.true_shared.resize(static_cast<Eigen::Index>(rows.size()), d.true_shared.cols());
        out.true_private.resize(static_cast<Eigen::Index>(rows.size()), d.true_private.cols());
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = rows[i];
        out.y.row(static_cast<Eigen::Index>(i)) = d.y.row(r);
        out.labels[i] = d.labels[static_cast<std::size_t>(r)];
        if (has_truth) {
            out.true_shared.row(static_cast<Eigen::Index>(i)) = d.true_shared.row(r);
            out.true_private.row(static_cast<Eigen::Index>(i)) = d.true_private.row(r);
        }
    }
    out.category_count = d.category_count;
    out.label_values = d.label_values;
    out.feature_names = d.feature_names;
    out.name = d.name + suffix;
    return out;
}

}  // namespace

std::vector<Eigen::Index> Dataset::class_counts() const {
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(category_count), 0);
    for (const auto& l : labels) counts[static_cast<std::size_t>(l.id - 1)]++;
    return counts;
}

void Dataset::validate() const {
    require(static_cast<Eigen::Index>(labels.size()) == y.rows(), "one label per row required");
    for (const auto& l : labels)
        require(l.id >= 1 && l.id <= category_count, "label id out of range");
    require(y.allFinite(), "observations must be finite");
    require(static_cast<int>(label_values.size()) == category_count,
            "label value mapping must cover every category");
    require(feature_names.empty() ||
                static_cast<Eigen::Index>(feature_names.size()) == y.cols(),
            "feature name count must match columns");
}

Matrix Standardization::apply(const Matrix& y) const {
    return (y.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Matrix Standardization::invert(const Matrix& y) const {
    return (y.array().rowwise() * scale.transpose().array()).matrix().rowwise() +
           mean.transpose();
}

Vector Standardization::apply_row(const Vector& row) const {
    return ((row - mean).array() / scale.array()).matrix();
}

Vector Standardization::invert_row(const Vector& row) const {
    return ((row.array() * scale.array()).matrix() + mean);
}

Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw data_error("'" + path + "': empty file, header required");
    const auto header = split_line(line);

    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size()) {
        if (!label_column.empty() &&
            std::all_of(label_column.begin(), label_column.end(),
                        [](unsigned char c) { return std::isdigit(c); })) {
            label_idx = static_cast<std::size_t>(std::stoul(label_column));
            if (label_idx >= header.size())
                throw data_error("'" + path + "': label column index " + label_column +
                                 " out of range for " + std::to_string(header.size()) +
                                 " columns");
        } else {
            throw data_error("'" + path + "': no column named '" + label_column + "'");
        }
    }

    Dataset d;
    d.name = path;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (i != label_idx) d.feature_names.push_back(header[i]);
    const auto n_features = d.feature_names.size();

    std::vector<double> values;
    std::vector<int> label_ids;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size())
            throw data_error("'" + path + "': row " + std::to_string(row) + " has " +
                             std::to_string(cells.size()) + " fields, expected " +
                             std::to_string(header.size()));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == label_idx) {
                const auto& value = cells[i];
                if (value.empty())
                    throw data_error("missing label at row " + std::to_string(row));
                auto it = std::find(d.label_values.begin(), d.label_values.end(), value);
                if (it == d.label_values.end()) {
                    d.label_values.push_back(value);
                    it = std::prev(d.label_values.end());
                }
                label_ids.push_back(
                    static_cast<int>(std::distance(d.label_values.begin(), it)) + 1);
            } else {
                values.push_back(parse_cell(cells[i], row, i, header[i]));
            }
        }
    }

    const auto n = static_cast<Eigen::Index>(label_ids.size());
    d.y.resize(n, static_cast<Eigen::Index>(n_features));
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < d.y.cols(); ++c)
            d.y(r, c) = values[static_cast<std::size_t>(r) * n_features +
                               static_cast<std::size_t>(c)];
    d.labels.resize(label_ids.size());
    for (std::size_t i = 0; i < label_ids.size(); ++i) d.labels[i] = CategoryLabel{label_ids[i]};
    d.category_count = static_cast<int>(d.label_values.size());
    d.validate();
    return d;
}

Dataset load_csv_features_only(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw data_error("'" + path + "': empty file, header required");
    const auto header = split_line(line);

    Dataset d;
    d.name = path;
    d.feature_names = header;
    d.category_count = 1;
    d.label_values = {"unlabeled"};

    std::vector<double> values;
    std::size_t row = 1;
    std::size_t n_rows = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size())
            throw data_error("'" + path + "': row " + std::to_string(row) + " has " +
                             std::to_string(cells.size()) + " fields, expected " +
                             std::to_string(header.size()));
        for (std::size_t i = 0; i < cells.size(); ++i)
            values.push_back(parse_cell(cells[i], row, i, header[i]));
        ++n_rows;
    }

    d.y.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(header.size()));
    for (Eigen::Index r = 0; r < d.y.rows(); ++r)
        for (Eigen::Index c = 0; c < d.y.cols(); ++c)
            d.y(r, c) = values[static_cast<std::size_t>(r) * header.size() +
                               static_cast<std::size_t>(c)];
    d.labels.assign(n_rows, CategoryLabel{1});
    d.validate();
    return d;
}

void save_csv(const Dataset& d, const std::string& path) {
    d.validate();
    std::ofstream out(path);
    if (!out) throw data_error("cannot write '" + path + "'");
    for (Eigen::Index c = 0; c < d.y.cols(); ++c) {
        out << (d.feature_names.empty() ? "f" + std::to_string(c + 1) : d.feature_names[static_cast<std::size_t>(c)]);
        out << ',';
    }
    out << "label\n";
    for (Eigen::Index r = 0; r < d.y.rows(); ++r) {
        for (Eigen::Index c = 0; c < d.y.cols(); ++c) out << format_double(d.y(r, c)) << ',';
        out << d.label_values[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(r)].id - 1)]
            << '\n';
    }
    if (!out) throw data_error("write failed for '" + path + "'");
}

std::pair<Dataset, Standardization> standardize(const Dataset& d) {
    d.validate();
    require(d.y.rows() > 0, "cannot standardize an empty dataset");
    Standardization st;
    st.mean = d.y.colwise().mean().transpose();
    const Matrix centered = d.y.rowwise() - st.mean.transpose();
    st.scale = (centered.array().square().colwise().mean()).sqrt().transpose();
    for (Eigen::Index c = 0; c < st.scale.size(); ++c) {
        if (!(st.scale[c] > 0.0)) {
            std::cerr << "warning: column " << (c + 1)
                      << " has zero variance; leaving it unscaled\n";
            st.scale[c] = 1.0;
        }
    }
    Dataset out = d;
    out.y = centered.array().rowwise() / st.scale.transpose().array();
    return {std::move(out), std::move(st)};
}

std::pair<Dataset, Dataset> imbalanced_split(const Dataset& d, Eigen::Index majority_cap,
                                             double minority_fraction, std::uint64_t seed,
                                             Eigen::Index test_majority_cap) {
    d.validate();
    require(minority_fraction > 0.0 && minority_fraction <= 1.0,
            "minority fraction must lie in (0, 1]");
    require(majority_cap >= 1, "majority cap must be positive");
    require(d.category_count >= 2, "split needs at least two categories");

    const auto counts = d.class_counts();
    std::size_t majority =
        static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) -
                                 counts.begin());

    std::vector<std::vector<Eigen::Index>> by_class(counts.size());
    for (Eigen::Index r = 0; r < d.y.rows(); ++r)
        by_class[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(r)].id - 1)]
            .push_back(r);

    Rng rng(seed);
    std::vector<Eigen::Index> train_rows, test_rows;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto rows = shuffled(by_class[c], rng);
        Eigen::Index n_train;
        if (c == majority) {
            n_train = std::min<Eigen::Index>(majority_cap,
                                             static_cast<Eigen::Index>(rows.size()));
        } else {
            n_train = static_cast<Eigen::Index>(
                std::llround(minority_fraction * static_cast<double>(rows.size())));
            n_train = std::clamp<Eigen::Index>(n_train, 0,
                                               static_cast<Eigen::Index>(rows.size()));
        }
        Eigen::Index n_test = static_cast<Eigen::Index>(rows.size()) - n_train;
        if (c == majority && test_majority_cap >= 0)
            n_test = std::min(n_test, test_majority_cap);
        if (n_train == 0 || n_test == 0)
            throw data_error("class '" + d.label_values[c] +
                             "' would be empty in train or test");
        for (Eigen::Index i = 0; i < n_train; ++i)
            train_rows.push_back(rows[static_cast<std::size_t>(i)]);
        for (Eigen::Index i = 0; i < n_test; ++i)
            test_rows.push_back(rows[static_cast<std::size_t>(n_train + i)]);
    }
    return {take_rows(d, train_rows, "/train"), take_rows(d, test_rows, "/test")};
}

Dataset synth_shared_private(Eigen::Index n_major, Eigen::Index n_minor, Eigen::Index q_s,
                             Eigen::Index q_p, Eigen::Index d, double offset,
                             std::uint64_t seed) {
    require(n_major > 0 && n_minor > 0, "both class sizes must be positive");
    require(q_s > 0 && q_p > 0 && d > 0, "latent and output dimensions must be positive");
    const Eigen::Index n = n_major + n_minor;
    const Eigen::Index hidden = 24;
    const double gain_shared = 2.0;
    const double gain_private = 0.8;
    const double noise_sd = 0.1;

    Rng rng(seed);
    // Random smooth maps, one per subspace, drawn before the codes so the
    // function is pinned by the seed regardless of sample counts.
    const Matrix u_s = rng.normal_matrix(hidden, q_s) / std::sqrt(static_cast<double>(q_s));
    const Vector c_s = rng.normal_vector(hidden);
    const Matrix w_s = rng.normal_matrix(d, hidden) / std::sqrt(static_cast<double>(hidden));
    const Matrix u_p = rng.normal_matrix(hidden, q_p) / std::sqrt(static_cast<double>(q_p));
    const Vector c_p = rng.normal_vector(hidden);
    const Matrix w_p = rng.normal_matrix(d, hidden) / std::sqrt(static_cast<double>(hidden));

    Dataset out;
    out.true_shared = rng.normal_matrix(n, q_s);
    out.true_private = rng.normal_matrix(n, q_p);
    const double mean_coord = offset / std::sqrt(static_cast<double>(q_p));
    out.true_private.topRows(n_major).array() -= mean_coord;
    out.true_private.bottomRows(n_minor).array() += mean_coord;

    auto net = [](const Matrix& x, const Matrix& u, const Vector& c, const Matrix& w) {
        Matrix h = x * u.transpose();
        h.rowwise() += c.transpose();
        return Matrix(h.array().tanh().matrix() * w.transpose());
    };
    out.y = gain_shared * net(out.true_shared, u_s, c_s, w_s) +
            gain_private * net(out.true_private, u_p, c_p, w_p) +
            noise_sd * rng.normal_matrix(n, d);

    out.labels.assign(static_cast<std::size_t>(n), CategoryLabel{1});
    for (Eigen::Index i = n_major; i < n; ++i) out.labels[static_cast<std::size_t>(i)].id = 2;
    out.category_count = 2;
    out.label_values = {"neg", "pos"};
    out.feature_names.reserve(static_cast<std::size_t>(d));
    for (Eigen::Index c = 0; c < d; ++c) out.feature_names.push_back("f" + std::to_string(c + 1));
    out.name = "synth";
    out.validate();
    return out;
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const char* what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw data_error(std::string("truncated container while reading ") + what);
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in, const char* what) {
    const auto len = read_pod<std::uint32_t>(in, what);
    std::string s(len, '\0');
    if (len > 0 && !in.read(s.data(), len))
        throw data_error(std::string("truncated container while reading ") + what);
    return s;
}

}  // namespace

void save_scld(const Dataset& d, const std::string& path) {
    d.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write '" + path + "'");
    out.write("SCLD", 4);
    write_pod(out, static_cast<std::uint32_t>(1));
    write_pod(out, static_cast<std::uint64_t>(d.y.rows()));
    write_pod(out, static_cast<std::uint64_t>(d.y.cols()));
    write_pod(out, static_cast<std::uint64_t>(d.category_count));
    for (Eigen::Index r = 0; r < d.y.rows(); ++r)
        for (Eigen::Index c = 0; c < d.y.cols(); ++c) write_pod(out, d.y(r, c));
    for (const auto& l : d.labels) write_pod(out, static_cast<std::uint32_t>(l.id));
    write_pod(out, static_cast<std::uint32_t>(d.label_values.size()));
    for (const auto& s : d.label_values) write_string(out, s);
    write_pod(out, static_cast<std::uint32_t>(d.feature_names.size()));
    for (const auto& s : d.feature_names) write_string(out, s);
    if (!out) throw data_error("write failed for '" + path + "'");
}

Dataset load_scld(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open '" + path + "'");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "SCLD", 4) != 0)
        throw data_error("'" + path + "' is not an SCLD container");
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != 1)
        throw data_error("unsupported SCLD version " + std::to_string(version));
    const auto n = static_cast<Eigen::Index>(read_pod<std::uint64_t>(in, "row count"));
    const auto d_cols = static_cast<Eigen::Index>(read_pod<std::uint64_t>(in, "column count"));
    const auto c = read_pod<std::uint64_t>(in, "category count");

    Dataset d;
    d.name = path;
    d.category_count = static_cast<int>(c);
    d.y.resize(n, d_cols);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index col = 0; col < d_cols; ++col)
            d.y(r, col) = read_pod<double>(in, "observations");
    d.labels.resize(static_cast<std::size_t>(n));
    for (auto& l : d.labels) l.id = static_cast<int>(read_pod<std::uint32_t>(in, "labels"));
    const auto n_values = read_pod<std::uint32_t>(in, "label value count");
    for (std::uint32_t i = 0; i < n_values; ++i)
        d.label_values.push_back(read_string(in, "label values"));
    const auto n_names = read_pod<std::uint32_t>(in, "feature name count");
    for (std::uint32_t i = 0; i < n_names; ++i)
        d.feature_names.push_back(read_string(in, "feature names"));
    d.validate();
    return d;
}

}  // namespace sclvm
