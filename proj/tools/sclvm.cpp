#include <CLI11.hpp>
#include <json.hpp>

#include "sclvm/dataio.hpp"
#include "sclvm/metrics.hpp"
#include "sclvm/model_io.hpp"
#include "sclvm/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using nlohmann::json;
using namespace sclvm;

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw data_error("cannot write '" + tmp + "'");
        out << content;
        if (!out) throw data_error("write failed for '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw data_error("cannot move '" + tmp + "' to '" + path + "'");
}

struct ManifestBuilder {
    json doc;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    explicit ManifestBuilder(const std::string& command) {
        doc["command"] = command;
        doc["inputs"] = json::object();
        doc["outputs"] = json::array();
    }
    void input(const std::string& path) { doc["inputs"][path] = digest_file(path); }
    void output(const std::string& path) { doc["outputs"].push_back(path); }
    void write(const std::string& path) {
        const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                           started);
        doc["wall_clock_seconds"] = elapsed.count();
        atomic_write(path, doc.dump(2) + "\n");
    }
};

Dataset load_any(const std::string& path, const std::string& label_column) {
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".scld") return load_scld(path);
    return load_csv(path, label_column);
}

std::string default_sibling(const std::string& primary, const char* suffix) {
    return primary + suffix;
}

void check_features(const TrainedModel& model, const Dataset& data) {
    if (data.n_dims() != model.state.data_ref.offset.size())
        throw data_error("test data has " + std::to_string(data.n_dims()) +
                         " features, model expects " +
                         std::to_string(model.state.data_ref.offset.size()));
    if (!model.feature_names.empty() && !data.feature_names.empty() &&
        model.feature_names != data.feature_names)
        throw data_error("test data feature names do not match the model's training features");
}

int cmd_fit(const std::string& data_path, const std::string& label_column,
            const LatentConfig& config, FitOptions opts, const std::string& out_path,
            std::string trace_path, std::string manifest_path) {
    if (trace_path.empty()) trace_path = default_sibling(out_path, ".trace.csv");
    if (manifest_path.empty()) manifest_path = default_sibling(out_path, ".manifest.json");

    ManifestBuilder manifest("fit");
    manifest.input(data_path);
    const Dataset data = load_any(data_path, label_column);
    const FitResult result = fit(data, config, opts);

    save_model(result.model, out_path + ".tmp");
    if (std::rename((out_path + ".tmp").c_str(), out_path.c_str()) != 0)
        throw data_error("cannot move model into place at '" + out_path + "'");
    manifest.output(out_path);

    std::ostringstream trace;
    trace << "iteration,elbo\n";
    for (std::size_t i = 0; i < result.trace.size(); ++i)
        trace << i << ',' << format_double(result.trace[i]) << '\n';
    atomic_write(trace_path, trace.str());
    manifest.output(trace_path);

    manifest.doc["config"] = {{"data", data_path},
                              {"label_column", label_column},
                              {"q_shared", config.q_shared},
                              {"q_private", config.q_private},
                              {"n_inducing", config.n_inducing},
                              {"max_iters", opts.max_iters},
                              {"optimizer",
                               opts.optimizer == FitOptions::Optimizer::adam ? "adam" : "lbfgs"},
                              {"step_size", opts.step_size},
                              {"convergence_tol", opts.convergence_tol}};
    manifest.doc["mode"] = config.q_private == 0 ? "bgplvm" : "sclvm";
    manifest.doc["seed"] = opts.seed;
    manifest.doc["result"] = {{"final_elbo", result.model.final_elbo},
                              {"iterations", result.trace.size() - 1},
                              {"converged", result.converged}};
    manifest.write(manifest_path);

    std::cout << "fit: elbo " << format_double(result.model.final_elbo) << " after "
              << (result.trace.size() - 1) << " iterations -> " << out_path << '\n';
    return 0;
}

Vector parse_priors(const std::string& spec, const TrainedModel& model) {
    if (spec == "empirical") return default_log_priors(model);
    const auto c = static_cast<Eigen::Index>(model.label_values.size());
    if (spec == "uniform")
        return Vector::Constant(c, -std::log(static_cast<double>(c)));
    std::vector<double> vals;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
    if (static_cast<Eigen::Index>(vals.size()) != c)
        throw contract_error("--priors needs one value per class (" + std::to_string(c) + ")");
    double total = 0.0;
    for (double v : vals) {
        require(v > 0.0, "priors must be positive");
        total += v;
    }
    Vector lp(c);
    for (Eigen::Index i = 0; i < c; ++i)
        lp[i] = std::log(vals[static_cast<std::size_t>(i)] / total);
    return lp;
}

int cmd_classify(const std::string& model_path, const std::string& data_path,
                 const std::string& label_column, const std::string& priors_spec,
                 const InferOptions& iopts, const std::string& out_path,
                 std::string manifest_path) {
    if (manifest_path.empty()) manifest_path = default_sibling(out_path, ".manifest.json");
    ManifestBuilder manifest("classify");
    manifest.input(model_path);
    manifest.input(data_path);

    const TrainedModel model = load_model(model_path);
    Dataset data;
    if (!label_column.empty()) {
        data = load_any(data_path, label_column);
    } else {
        // No label column: every column is a feature.
        data = load_csv_features_only(data_path);
    }
    check_features(model, data);
    const Vector log_priors = parse_priors(priors_spec, model);

    std::ostringstream out;
    out << "predicted_label";
    for (const auto& v : model.label_values) out << ",prob_" << v;
    for (const auto& v : model.label_values) out << ",delta_" << v;
    out << '\n';

    const auto c = model.label_values.size();
    for (Eigen::Index r = 0; r < data.n_points(); ++r) {
        const auto scores = classify(data.y.row(r).transpose(), model, log_priors, iopts);
        std::vector<double> prob(c, 0.0), delta(c, 0.0);
        for (const auto& s : scores) {
            prob[static_cast<std::size_t>(s.label.id - 1)] = s.posterior_prob;
            delta[static_cast<std::size_t>(s.label.id - 1)] = s.bound;
        }
        out << model.label_values[static_cast<std::size_t>(scores.front().label.id - 1)];
        for (double p : prob) out << ',' << format_double(p);
        for (double d : delta) out << ',' << format_double(d);
        out << '\n';
    }
    atomic_write(out_path, out.str());
    manifest.output(out_path);

    manifest.doc["config"] = {{"model", model_path},
                              {"data", data_path},
                              {"priors", priors_spec},
                              {"infer_max_iters", iopts.max_iters},
                              {"infer_step_size", iopts.step_size}};
    manifest.doc["seed"] = 0;
    manifest.doc["result"] = {{"rows", data.n_points()}};
    manifest.write(manifest_path);
    std::cout << "classify: " << data.n_points() << " rows -> " << out_path << '\n';
    return 0;
}

int cmd_metrics(const std::string& predictions_path, const std::string& truth_path,
                const std::string& truth_label_column, const std::string& positive,
                const std::string& out_path, std::string manifest_path) {
    if (manifest_path.empty()) manifest_path = default_sibling(out_path, ".manifest.json");
    ManifestBuilder manifest("metrics");
    manifest.input(predictions_path);
    manifest.input(truth_path);

    const Dataset preds = load_csv(predictions_path, "predicted_label");
    const Dataset truth = load_any(truth_path, truth_label_column);
    if (preds.n_points() != truth.n_points())
        throw data_error("predictions have " + std::to_string(preds.n_points()) +
                         " rows, truth has " + std::to_string(truth.n_points()));

    // Shared value->id mapping across both files.
    std::vector<std::string> values;
    auto id_of = [&values](const std::string& v) {
        for (std::size_t i = 0; i < values.size(); ++i)
            if (values[i] == v) return static_cast<int>(i) + 1;
        values.push_back(v);
        return static_cast<int>(values.size());
    };
    std::vector<int> pred_ids, truth_ids;
    for (const auto& l : preds.labels)
        pred_ids.push_back(id_of(preds.label_values[static_cast<std::size_t>(l.id - 1)]));
    for (const auto& l : truth.labels)
        truth_ids.push_back(id_of(truth.label_values[static_cast<std::size_t>(l.id - 1)]));
    const int positive_id = id_of(positive);

    const auto m = precision_recall_f1(pred_ids, truth_ids, positive_id);
    std::ostringstream out;
    out << "precision,recall,f1,tp,fp,fn\n"
        << format_double(m.precision) << ',' << format_double(m.recall) << ','
        << format_double(m.f1) << ',' << m.tp << ',' << m.fp << ',' << m.fn << '\n';
    atomic_write(out_path, out.str());
    manifest.output(out_path);

    std::cout << "precision " << format_double(m.precision) << '\n'
              << "recall " << format_double(m.recall) << '\n'
              << "f1 " << format_double(m.f1) << '\n';

    manifest.doc["config"] = {{"predictions", predictions_path},
                              {"truth", truth_path},
                              {"positive", positive}};
    manifest.doc["seed"] = 0;
    manifest.doc["result"] = {
        {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
    manifest.write(manifest_path);
    return 0;
}

int cmd_sample(const std::string& model_path, const std::string& class_value, Eigen::Index n,
               std::uint64_t seed, const std::string& out_path, std::string manifest_path) {
    if (manifest_path.empty()) manifest_path = default_sibling(out_path, ".manifest.json");
    ManifestBuilder manifest("sample");
    manifest.input(model_path);

    const TrainedModel model = load_model(model_path);
    int label_id = 0;
    for (std::size_t i = 0; i < model.label_values.size(); ++i)
        if (model.label_values[i] == class_value) label_id = static_cast<int>(i) + 1;
    if (label_id == 0)
        throw data_error("class '" + class_value + "' is not one of the model's labels");

    const Matrix samples = generate(model, CategoryLabel{label_id}, n, seed);

    std::ostringstream out;
    for (Eigen::Index c = 0; c < samples.cols(); ++c) {
        if (c > 0) out << ',';
        out << (model.feature_names.empty() ? "f" + std::to_string(c + 1)
                                            : model.feature_names[static_cast<std::size_t>(c)]);
    }
    out << '\n';
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        for (Eigen::Index c = 0; c < samples.cols(); ++c) {
            if (c > 0) out << ',';
            out << format_double(samples(r, c));
        }
        out << '\n';
    }
    atomic_write(out_path, out.str());
    manifest.output(out_path);

    manifest.doc["config"] = {{"model", model_path}, {"class", class_value}, {"n", n}};
    manifest.doc["seed"] = seed;
    manifest.doc["result"] = {{"rows", n}};
    manifest.write(manifest_path);
    std::cout << "sample: " << n << " rows of class " << class_value << " -> " << out_path
              << '\n';
    return 0;
}

int cmd_export_latent(const std::string& model_path, const std::string& out_path,
                      std::string manifest_path) {
    if (manifest_path.empty()) manifest_path = default_sibling(out_path, ".manifest.json");
    ManifestBuilder manifest("export-latent");
    manifest.input(model_path);

    const TrainedModel model = load_model(model_path);
    const ModelState& st = model.state;
    const Eigen::Index q_s = st.config.q_shared;
    const Eigen::Index q_p = st.config.q_private;

    std::ostringstream out;
    for (Eigen::Index j = 0; j < q_s; ++j) out << 's' << (j + 1) << ',';
    for (Eigen::Index j = 0; j < q_p; ++j) out << 'p' << (j + 1) << ',';
    for (Eigen::Index j = 0; j < q_s; ++j) out << 's' << (j + 1) << "_var,";
    for (Eigen::Index j = 0; j < q_p; ++j) out << 'p' << (j + 1) << "_var,";
    out << "label\n";
    for (Eigen::Index r = 0; r < st.q.n_points(); ++r) {
        for (Eigen::Index j = 0; j < q_s + q_p; ++j) out << format_double(st.q.means(r, j)) << ',';
        for (Eigen::Index j = 0; j < q_s + q_p; ++j)
            out << format_double(st.q.variances(r, j)) << ',';
        out << model
                   .label_values[static_cast<std::size_t>(
                       st.labels[static_cast<std::size_t>(r)].id - 1)]
            << '\n';
    }
    atomic_write(out_path, out.str());
    manifest.output(out_path);

    manifest.doc["config"] = {{"model", model_path}};
    manifest.doc["seed"] = 0;
    manifest.doc["result"] = {{"rows", st.q.n_points()}};
    manifest.write(manifest_path);
    std::cout << "export-latent: " << st.q.n_points() << " rows -> " << out_path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* threads = std::getenv("SCLVM_THREADS")) {
        const int n = std::atoi(threads);
        if (n > 0) Eigen::setNbThreads(n);
    }

    CLI::App app{"structure-consolidating latent variable model"};
    app.require_subcommand(1);

    // fit
    std::string data_path, label_column = "label", out_path, trace_path, manifest_path;
    LatentConfig config;
    config.q_shared = 5;
    config.q_private = 5;
    config.n_inducing = 50;
    FitOptions fopts;
    std::string optimizer = "adam";
    auto* fit_cmd = app.add_subcommand("fit", "train a model from labeled data");
    fit_cmd->add_option("--data", data_path, "input CSV (or .scld) path")->required();
    fit_cmd->add_option("--label-column", label_column, "label column name or index");
    fit_cmd->add_option("--q-shared", config.q_shared, "shared latent dimensions");
    fit_cmd->add_option("--q-private", config.q_private, "private latent dimensions");
    fit_cmd->add_option("--inducing", config.n_inducing, "number of inducing points");
    fit_cmd->add_option("--iters", fopts.max_iters, "maximum optimizer iterations");
    fit_cmd->add_option("--optimizer", optimizer, "adam or lbfgs")
        ->check(CLI::IsMember({"adam", "lbfgs"}));
    fit_cmd->add_option("--step", fopts.step_size, "optimizer step size");
    fit_cmd->add_option("--tol", fopts.convergence_tol, "relative ELBO convergence tolerance");
    fit_cmd->add_option("--seed", fopts.seed, "random seed");
    fit_cmd->add_option("--out", out_path, "model output path")->required();
    fit_cmd->add_option("--trace", trace_path, "ELBO trace CSV path");
    fit_cmd->add_option("--manifest", manifest_path, "run manifest path");

    // classify
    std::string model_path, priors_spec = "empirical", cls_label_column;
    InferOptions iopts;
    auto* cls_cmd = app.add_subcommand("classify", "score held-out rows");
    cls_cmd->add_option("--model", model_path, "model file")->required();
    cls_cmd->add_option("--data", data_path, "test CSV path")->required();
    cls_cmd->add_option("--label-column", cls_label_column,
                        "label column to drop from the test file, if present");
    cls_cmd->add_option("--priors", priors_spec,
                        "empirical, uniform, or comma-separated class weights");
    cls_cmd->add_option("--infer-iters", iopts.max_iters, "per-point optimizer iterations");
    cls_cmd->add_option("--infer-step", iopts.step_size, "per-point optimizer step");
    cls_cmd->add_option("--out", out_path, "predictions CSV path")->required();
    cls_cmd->add_option("--manifest", manifest_path, "run manifest path");

    // metrics
    std::string predictions_path, truth_path, truth_label_column = "label", positive;
    auto* met_cmd = app.add_subcommand("metrics", "precision/recall/F1 for one positive class");
    met_cmd->add_option("--predictions", predictions_path, "predictions CSV")->required();
    met_cmd->add_option("--truth", truth_path, "CSV holding the true labels")->required();
    met_cmd->add_option("--label-column", truth_label_column, "label column in the truth file");
    met_cmd->add_option("--positive", positive, "positive class value")->required();
    met_cmd->add_option("--out", out_path, "metrics CSV path")->required();
    met_cmd->add_option("--manifest", manifest_path, "run manifest path");

    // sample
    std::string class_value;
    Eigen::Index n_samples = 10;
    std::uint64_t sample_seed = 1;
    auto* smp_cmd = app.add_subcommand("sample", "generate observations for a class");
    smp_cmd->add_option("--model", model_path, "model file")->required();
    smp_cmd->add_option("--class", class_value, "class value to sample")->required();
    smp_cmd->add_option("--n", n_samples, "number of samples");
    smp_cmd->add_option("--seed", sample_seed, "random seed");
    smp_cmd->add_option("--out", out_path, "samples CSV path")->required();
    smp_cmd->add_option("--manifest", manifest_path, "run manifest path");

    // export-latent
    auto* exp_cmd = app.add_subcommand("export-latent", "write the training latent posterior");
    exp_cmd->add_option("--model", model_path, "model file")->required();
    exp_cmd->add_option("--out", out_path, "latent CSV path")->required();
    exp_cmd->add_option("--manifest", manifest_path, "run manifest path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (fit_cmd->parsed()) {
            fopts.optimizer = optimizer == "lbfgs" ? FitOptions::Optimizer::lbfgs
                                                   : FitOptions::Optimizer::adam;
            return cmd_fit(data_path, label_column, config, fopts, out_path, trace_path,
                           manifest_path);
        }
        if (cls_cmd->parsed())
            return cmd_classify(model_path, data_path, cls_label_column, priors_spec, iopts,
                                out_path, manifest_path);
        if (met_cmd->parsed())
            return cmd_metrics(predictions_path, truth_path, truth_label_column, positive,
                               out_path, manifest_path);
        if (smp_cmd->parsed())
            return cmd_sample(model_path, class_value, n_samples, sample_seed, out_path,
                              manifest_path);
        if (exp_cmd->parsed()) return cmd_export_latent(model_path, out_path, manifest_path);
        std::cerr << "error: no command\n";
        return 1;
    } catch (const contract_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const data_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const numerical_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
