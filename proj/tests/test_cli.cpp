#include <doctest.h>

#include <json.hpp>

#include "sclvm/dataio.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace sclvm;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd =
        std::string(SCLVM_CLI_BINARY) + " " + args + " >/dev/null 2>/dev/null";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name) : dir("cli_scratch_" + name) {
        fs::remove_all(dir);
        fs::create_directory(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& leaf) const { return (dir / leaf).string(); }
};

void write_fixture(const std::string& path, std::uint64_t seed = 5) {
    save_csv(synth_shared_private(40, 20, 1, 1, 6, 3.0, seed), path);
}

std::string fit_args(const Scratch& s, const std::string& extra = "") {
    return "fit --data " + (s / "train.csv") +
           " --q-shared 1 --q-private 1 --inducing 8 --iters 120 --seed 3 --out " +
           (s / "model.json") + " " + extra;
}

}  // namespace

TEST_CASE("cli fit produces model, trace, and manifest") {
    Scratch s("fit");
    write_fixture(s / "train.csv");
    CHECK(run(fit_args(s)) == 0);
    CHECK(fs::exists(s / "model.json"));
    CHECK(fs::exists(s / "model.json.trace.csv"));
    CHECK(fs::exists(s / "model.json.manifest.json"));

    const auto manifest = nlohmann::json::parse(slurp(s / "model.json.manifest.json"));
    CHECK(manifest.at("command") == "fit");
    CHECK(manifest.at("mode") == "sclvm");
    CHECK(manifest.at("seed") == 3);
    CHECK(manifest.at("inputs").size() == 1);
    CHECK(manifest.at("result").contains("final_elbo"));
    CHECK(manifest.at("wall_clock_seconds").get<double>() > 0.0);

    const std::string trace = slurp(s / "model.json.trace.csv");
    CHECK(trace.rfind("iteration,elbo\n", 0) == 0);
    CHECK(line_count(trace) == 122);  // header + initial value + 120 iterations
}

TEST_CASE("cli fit in label blind mode flags the manifest") {
    Scratch s("bgplvm");
    write_fixture(s / "train.csv");
    const std::string args = "fit --data " + (s / "train.csv") +
                             " --q-shared 2 --q-private 0 --inducing 8 --iters 30 --out " +
                             (s / "model.json");
    CHECK(run(args) == 0);
    const auto manifest = nlohmann::json::parse(slurp(s / "model.json.manifest.json"));
    CHECK(manifest.at("mode") == "bgplvm");
}

TEST_CASE("cli usage problems exit with code one") {
    Scratch s("usage");
    write_fixture(s / "train.csv");
    CHECK(run("frobnicate") == 1);
    CHECK(run("fit --no-such-flag") == 1);
    CHECK(run("fit --data " + (s / "train.csv")) == 1);  // missing --out
    CHECK(run("fit --data " + (s / "train.csv") + " --optimizer sgd --out " +
              (s / "m.json")) == 1);
    // Too few inducing points for two categories: a contract violation.
    CHECK(run("fit --data " + (s / "train.csv") + " --inducing 3 --q-shared 1 --q-private 1 " +
              "--iters 5 --out " + (s / "m.json")) == 1);
}

TEST_CASE("cli data problems exit with code two") {
    Scratch s("data");
    CHECK(run("fit --data " + (s / "nope.csv") + " --out " + (s / "m.json")) == 2);
    {
        std::ofstream bad(s / "bad.csv");
        bad << "a,label\n1.0,x\nnot_a_number,y\n";
    }
    CHECK(run("fit --data " + (s / "bad.csv") + " --out " + (s / "m.json")) == 2);
    write_fixture(s / "train.csv");
    CHECK(run(fit_args(s)) == 0);
    CHECK(run("classify --model " + (s / "nope.json") + " --data " + (s / "train.csv") +
              " --out " + (s / "p.csv")) == 2);
}

TEST_CASE("cli numerical failures exit with code three") {
    Scratch s("numeric");
    write_fixture(s / "train.csv");
    REQUIRE(run(fit_args(s)) == 0);

    // Duplicate inducing inputs plus an exhausted jitter ladder cannot factor.
    auto doc = nlohmann::json::parse(slurp(s / "model.json"));
    auto& inputs = doc["inducing"]["inputs"];
    inputs[1] = inputs[0];
    doc["inducing"]["labels"][1] = doc["inducing"]["labels"][0];
    doc["numerics"]["base_rel"] = 1e-30;
    doc["numerics"]["max_rel"] = 2e-30;
    {
        std::ofstream out(s / "model.json");
        out << doc.dump(2);
    }
    {
        std::ofstream test(s / "one.csv");
        test << "f1,f2,f3,f4,f5,f6\n0.1,0.2,0.3,0.4,0.5,0.6\n";
    }
    CHECK(run("classify --model " + (s / "model.json") + " --data " + (s / "one.csv") +
              " --out " + (s / "p.csv")) == 3);
}

TEST_CASE("cli classify handles an empty test file") {
    Scratch s("empty");
    write_fixture(s / "train.csv");
    REQUIRE(run(fit_args(s)) == 0);
    {
        std::ofstream test(s / "empty.csv");
        test << "f1,f2,f3,f4,f5,f6\n";
    }
    CHECK(run("classify --model " + (s / "model.json") + " --data " + (s / "empty.csv") +
              " --out " + (s / "p.csv")) == 0);
    const std::string preds = slurp(s / "p.csv");
    CHECK(preds ==
          "predicted_label,prob_neg,prob_pos,delta_neg,delta_pos\n");
}

TEST_CASE("cli classify then metrics closes the loop") {
    Scratch s("loop");
    write_fixture(s / "train.csv");
    REQUIRE(run(fit_args(s)) == 0);
    // Score ten training rows against their own labels.
    const Dataset d = load_csv(s / "train.csv", "label");
    Dataset probe = d;
    probe.y = d.y.topRows(10);
    probe.labels.assign(d.labels.begin(), d.labels.begin() + 10);
    save_csv(probe, s / "probe.csv");

    CHECK(run("classify --model " + (s / "model.json") + " --data " + (s / "probe.csv") +
              " --label-column label --out " + (s / "p.csv")) == 0);
    const std::string preds = slurp(s / "p.csv");
    CHECK(line_count(preds) == 11);

    CHECK(run("metrics --predictions " + (s / "p.csv") + " --truth " + (s / "probe.csv") +
              " --positive pos --out " + (s / "met.csv")) == 0);
    const std::string met = slurp(s / "met.csv");
    CHECK(met.rfind("precision,recall,f1", 0) == 0);
}

TEST_CASE("cli sample writes the requested rows in data units") {
    Scratch s("sample");
    write_fixture(s / "train.csv");
    REQUIRE(run(fit_args(s)) == 0);
    CHECK(run("sample --model " + (s / "model.json") +
              " --class pos --n 7 --seed 2 --out " + (s / "samples.csv")) == 0);
    const std::string text = slurp(s / "samples.csv");
    CHECK(line_count(text) == 8);
    CHECK(text.rfind("f1,f2,f3,f4,f5,f6\n", 0) == 0);
    CHECK(run("sample --model " + (s / "model.json") + " --class nope --n 2 --out " +
              (s / "x.csv")) == 2);
}

TEST_CASE("cli export latent has the documented column layout") {
    Scratch s("latent");
    write_fixture(s / "train.csv");
    REQUIRE(run(fit_args(s)) == 0);
    CHECK(run("export-latent --model " + (s / "model.json") + " --out " +
              (s / "latent.csv")) == 0);
    const std::string text = slurp(s / "latent.csv");
    std::istringstream lines(text);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "s1,p1,s1_var,p1_var,label");
    CHECK(line_count(text) == 61);
}

TEST_CASE("cli runs are byte identical across repeats") {
    Scratch s("repeat");
    write_fixture(s / "train.csv");
    REQUIRE(run(fit_args(s)) == 0);
    const std::string model_a = slurp(s / "model.json");
    const std::string trace_a = slurp(s / "model.json.trace.csv");
    REQUIRE(run("fit --data " + (s / "train.csv") +
                " --q-shared 1 --q-private 1 --inducing 8 --iters 120 --seed 3 --out " +
                (s / "model2.json")) == 0);
    CHECK(slurp(s / "model2.json") == model_a);
    CHECK(slurp(s / "model2.json.trace.csv") == trace_a);

    {
        std::ofstream test(s / "probe.csv");
        test << "f1,f2,f3,f4,f5,f6\n0.3,-0.2,0.5,0.1,-0.4,0.2\n";
    }
    REQUIRE(run("classify --model " + (s / "model.json") + " --data " + (s / "probe.csv") +
                " --out " + (s / "p1.csv")) == 0);
    REQUIRE(run("classify --model " + (s / "model.json") + " --data " + (s / "probe.csv") +
                " --out " + (s / "p2.csv")) == 0);
    CHECK(slurp(s / "p1.csv") == slurp(s / "p2.csv"));

    REQUIRE(run("sample --model " + (s / "model.json") +
                " --class neg --n 5 --seed 11 --out " + (s / "s1.csv")) == 0);
    REQUIRE(run("sample --model " + (s / "model.json") +
                " --class neg --n 5 --seed 11 --out " + (s / "s2.csv")) == 0);
    CHECK(slurp(s / "s1.csv") == slurp(s / "s2.csv"));
}

TEST_CASE("cli fit accepts the binary container") {
    Scratch s("scld");
    const Dataset d = synth_shared_private(40, 20, 1, 1, 6, 3.0, 5);
    save_scld(d, s / "train.scld");
    const std::string args = "fit --data " + (s / "train.scld") +
                             " --q-shared 1 --q-private 1 --inducing 8 --iters 30 --out " +
                             (s / "model.json");
    CHECK(run(args) == 0);
    CHECK(fs::exists(s / "model.json"));
}
