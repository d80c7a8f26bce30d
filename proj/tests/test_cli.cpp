#include "csm/cli.hpp"
#include "csm/eventlog.hpp"
#include "support/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = csm::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "csm_cli_tests";
    fs::create_directories(dir);
    return dir / name;
}

const std::string protocol = std::string(CSM_TEST_DIR) + "/../data/lab_protocol.cfg";

} // namespace

TEST_CASE("help output matches the golden files") {
    const std::string golden = std::string(CSM_TEST_DIR) + "/golden/";
    const auto top = run({"--help"});
    CHECK(top.code == 0);
    CHECK(top.out == slurp(golden + "help_main.txt"));
    for (const std::string c : {"gen", "build", "validate", "predict", "reclassify", "report-clusters", "export-dot"}) {
        CAPTURE(c);
        const auto r = run({c, "--help"});
        CHECK(r.code == 0);
        CHECK(r.out == slurp(golden + "help_" + c + ".txt"));
    }
}

TEST_CASE("exit codes") {
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"gen", "--protocol", protocol, "--bogus"}).code == 2);
    CHECK(run({"build"}).code == 2);
    CHECK(run({"build", "--logs", "/nonexistent/x.log", "--out", scratch("x.model").string()}).code == 1);
    const auto r = run({"predict", "--model", "/nonexistent/m"});
    CHECK(r.code == 1);
    CHECK_FALSE(r.err.empty());

    const auto logs = scratch("bad.log");
    std::ofstream(logs) << "this is not a log\n";
    CHECK(run({"build", "--logs", logs.string(), "--out", scratch("bad.model").string()}).code == 1);
}

TEST_CASE("gen is deterministic") {
    const auto a = scratch("gen_a.log"), b = scratch("gen_b.log");
    REQUIRE(run({"gen", "--protocol", protocol, "--students", "20", "--seed", "7", "--out", a.string()}).code == 0);
    REQUIRE(run({"gen", "--protocol", protocol, "--students", "20", "--seed", "7", "--out", b.string()}).code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(csm::read_log_file(a).size() == 20);
}

TEST_CASE("build then validate reports the oracle alignment error") {
    const auto logs = scratch("pipe.log"), model = scratch("pipe.model");
    REQUIRE(run({"gen", "--protocol", protocol, "--students", "12", "--seed", "3", "--out", logs.string()}).code == 0);
    REQUIRE(run({"build", "--logs", logs.string(), "--method", "none", "--out", model.string()}).code == 0);
    const auto r = run({"validate", "--logs", logs.string(), "--model", model.string(), "--grid", "0:0", "--format", "csv"});
    REQUIRE(r.code == 0);
    const auto line = r.out.substr(r.out.find('\n') + 1);
    const double reported = std::stod(line.substr(line.rfind(',') + 1));

    const auto cohort = csm::read_log_file(logs);
    const auto counts = oracle::count(cohort);
    std::vector<oracle::Alignment> ref;
    std::vector<std::string> ids;
    for (const auto& l : cohort) {
        ref.push_back(oracle::align(counts, l, 0, 0));
        ids.push_back(l.student);
    }
    CHECK(std::abs(reported - oracle::mean_over(ref, ids)) <= 5e-7);
}

TEST_CASE("pipeline outputs are byte-identical across reruns") {
    const auto logs = scratch("det.log");
    REQUIRE(run({"gen", "--protocol", protocol, "--students", "30", "--seed", "11", "--out", logs.string()}).code == 0);
    // Reclassification needs students the model has not seen.
    const auto fresh = scratch("det_new.log");
    {
        auto cohort = csm::read_log_file(logs);
        for (auto& l : cohort) {
            l.student = "n" + l.student;
            for (auto& e : l.events) e.student = l.student;
        }
        std::ofstream(fresh) << csm::serialize_logs(cohort);
    }
    auto once = [&](const std::string& tag) {
        const auto m = scratch("det_" + tag + ".model");
        REQUIRE(run({"build", "--logs", logs.string(), "--method", "xmeans", "--feature", "events-by-zone", "--seed", "5",
                     "--out", m.string()})
                    .code == 0);
        std::string all = slurp(m);
        for (const auto& args : std::vector<std::vector<std::string>>{
                 {"validate", "--logs", logs.string(), "--splits", "5", "--grid", "0:0,0.5:0.5", "--jobs", tag == "a" ? "1" : "2"},
                 {"predict", "--model", m.string()},
                 {"report-clusters", "--model", m.string()},
                 {"export-dot", "--model", m.string()},
                 {"reclassify", "--model", m.string(), "--logs", fresh.string(), "--out", scratch("det_" + tag + ".re").string()}}) {
            const auto r = run(args);
            CAPTURE(r.err);
            REQUIRE(r.code == 0);
            all += r.out;
        }
        return all + slurp(scratch("det_" + tag + ".re"));
    };
    CHECK(once("a") == once("b"));
}
