#include "sclvm/model_io.hpp"

#include <json.hpp>

#include <fstream>

namespace sclvm {

namespace {

using nlohmann::json;

json to_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

json to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Vector vec_from(const json& j, const char* what) {
    if (!j.is_array()) throw data_error(std::string("model field ") + what + " must be an array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

Matrix mat_from(const json& j, const char* what) {
    if (!j.is_array()) throw data_error(std::string("model field ") + what + " must be an array");
    const auto rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return Matrix(0, 0);
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (static_cast<Eigen::Index>(row.size()) != cols)
            throw data_error(std::string("model field ") + what + " is ragged");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

std::vector<CategoryLabel> labels_from(const json& j, const char* what) {
    if (!j.is_array()) throw data_error(std::string("model field ") + what + " must be an array");
    std::vector<CategoryLabel> out(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) out[i] = CategoryLabel{j[i].get<int>()};
    return out;
}

json labels_to(const std::vector<CategoryLabel>& labels) {
    json arr = json::array();
    for (const auto& l : labels) arr.push_back(l.id);
    return arr;
}

}  // namespace

void save_model(const TrainedModel& model, const std::string& path) {
    model.validate();
    const ModelState& st = model.state;
    json j;
    j["format"] = "SCLVM1";
    j["config"] = {{"q_shared", st.config.q_shared},
                   {"q_private", st.config.q_private},
                   {"n_inducing", st.config.n_inducing}};
    j["kernel"] = {{"shared",
                    {{"variance", st.kernel.shared.variance},
                     {"lengthscales", to_json(st.kernel.shared.lengthscales)}}},
                   {"private",
                    {{"variance", st.kernel.priv.variance},
                     {"lengthscales", to_json(st.kernel.priv.lengthscales)}}},
                   {"noise_variance", st.kernel.noise_variance}};
    j["posterior"] = {{"means", to_json(st.q.means)}, {"variances", to_json(st.q.variances)}};
    j["inducing"] = {{"inputs", to_json(st.u.inputs)}, {"labels", labels_to(st.u.labels)}};
    j["training_labels"] = labels_to(st.labels);
    j["label_values"] = model.label_values;
    j["feature_names"] = model.feature_names;
    j["class_counts"] = model.class_counts;
    j["standardization"] = {{"mean", to_json(st.data_ref.offset)},
                            {"scale", to_json(st.data_ref.scale)}};
    j["dataset_digest"] = st.data_ref.digest;
    j["numerics"] = {{"base_rel", st.numerics.base_rel},
                     {"growth", st.numerics.growth},
                     {"max_rel", st.numerics.max_rel}};
    j["summaries"] = {{"psi2", to_json(model.summaries.psi2)},
                      {"b", to_json(model.summaries.b)},
                      {"psi0", model.summaries.psi0},
                      {"y_norm2", model.summaries.y_norm2},
                      {"n_points", model.summaries.n_points},
                      {"n_dims", model.summaries.n_dims},
                      {"f_total", model.summaries.f_total}};
    j["final_elbo"] = model.final_elbo;

    std::ofstream out(path);
    if (!out) throw data_error("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw data_error("write failed for '" + path + "'");
}

TrainedModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw data_error("'" + path + "' is not valid JSON: " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "SCLVM1")
            throw data_error("'" + path + "' has unsupported format tag");

        TrainedModel m;
        ModelState& st = m.state;
        const auto& cfg = j.at("config");
        st.config.q_shared = cfg.at("q_shared").get<Eigen::Index>();
        st.config.q_private = cfg.at("q_private").get<Eigen::Index>();
        st.config.n_inducing = cfg.at("n_inducing").get<Eigen::Index>();

        const auto& k = j.at("kernel");
        st.kernel.shared.variance = k.at("shared").at("variance").get<double>();
        st.kernel.shared.lengthscales = vec_from(k.at("shared").at("lengthscales"), "kernel");
        st.kernel.priv.variance = k.at("private").at("variance").get<double>();
        st.kernel.priv.lengthscales = vec_from(k.at("private").at("lengthscales"), "kernel");
        st.kernel.noise_variance = k.at("noise_variance").get<double>();

        st.q.means = mat_from(j.at("posterior").at("means"), "posterior means");
        st.q.variances = mat_from(j.at("posterior").at("variances"), "posterior variances");
        st.u.inputs = mat_from(j.at("inducing").at("inputs"), "inducing inputs");
        st.u.labels = labels_from(j.at("inducing").at("labels"), "inducing labels");
        st.labels = labels_from(j.at("training_labels"), "training labels");

        m.label_values = j.at("label_values").get<std::vector<std::string>>();
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.class_counts = j.at("class_counts").get<std::vector<Eigen::Index>>();

        st.data_ref.offset = vec_from(j.at("standardization").at("mean"), "standardization");
        st.data_ref.scale = vec_from(j.at("standardization").at("scale"), "standardization");
        st.data_ref.digest = j.at("dataset_digest").get<std::string>();

        const auto& num = j.at("numerics");
        st.numerics.base_rel = num.at("base_rel").get<double>();
        st.numerics.growth = num.at("growth").get<double>();
        st.numerics.max_rel = num.at("max_rel").get<double>();

        const auto& s = j.at("summaries");
        m.summaries.psi2 = mat_from(s.at("psi2"), "summaries psi2");
        m.summaries.b = mat_from(s.at("b"), "summaries b");
        m.summaries.psi0 = s.at("psi0").get<double>();
        m.summaries.y_norm2 = s.at("y_norm2").get<double>();
        m.summaries.n_points = s.at("n_points").get<Eigen::Index>();
        m.summaries.n_dims = s.at("n_dims").get<Eigen::Index>();
        m.summaries.f_total = s.at("f_total").get<double>();
        m.final_elbo = j.at("final_elbo").get<double>();

        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw data_error("'" + path + "' is missing model fields: " + std::string(e.what()));
    }
}

}  // namespace sclvm
