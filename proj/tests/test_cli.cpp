#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "iwl/cli/runner.hpp"

using namespace iwl::cli;
namespace fs = std::filesystem;

namespace {

const char* kThm3 = R"({
  "name": "cli-thm3", "formula": "thm3", "seed": 12,
  "time": {"t_end": 1.0, "steps": 20},
  "sizes": {"n_law": 15, "n_copy": 15, "worlds": 6},
  "state": {"template": "jump-diffusion", "params": {"sigma": [0.4], "rate": 2.0}, "x0_sd": 0.3},
  "field": "mean-squared"
})";

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("iwl-test-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(IWL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Catalog, ListsTheBuiltInTemplates) {
    const auto cat = Catalog::builtin();
    for (const char* n : {"polynomial", "sin", "bump"}) EXPECT_TRUE(cat.find(Category::TestFunction, n)) << n;
    for (const char* n : {"mean", "second-moment", "mean-squared"}) EXPECT_TRUE(cat.find(Category::Field, n)) << n;
    for (const char* n : {"bm", "drifted-bm", "compound-poisson", "jump-diffusion"})
        EXPECT_TRUE(cat.find(Category::Coefficients, n)) << n;
}

TEST(Catalog, ListingIsSortedByCategoryThenName) {
    const auto cat = Catalog::builtin();
    const auto list = cat.list();
    for (std::size_t i = 1; i < list.size(); ++i) {
        const auto* a = list[i - 1];
        const auto* b = list[i];
        EXPECT_TRUE(a->category < b->category || (a->category == b->category && a->name < b->name))
            << a->name << " before " << b->name;
    }
}

TEST(Catalog, EmptyRegistryAddsNothing) {
    auto cat = Catalog::builtin();
    const std::string before = cat.to_json().dump();
    cat.load_registry(Json::object());
    EXPECT_EQ(cat.to_json().dump(), before);
    std::ostringstream a, b;
    Catalog::builtin().print(a);
    cat.print(b);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Catalog, RegistryPresetsBecomeTemplatesWithTheirDefaults) {
    auto cat = Catalog::builtin();
    cat.load_registry(Json::parse(R"({"test-function": {"wide": {"template": "gaussian-bump", "params": {"width": 2.0}}}})"));
    const Template* t = cat.find(Category::TestFunction, "wide");
    ASSERT_TRUE(t);
    EXPECT_TRUE(t->custom);
    EXPECT_EQ(t->base, "gaussian-bump");
    const auto g = cat.test_function("wide", "tf");
    const std::vector<double> x{2.0};
    EXPECT_NEAR(g->value(x), std::exp(-0.5), 1e-15);
    EXPECT_NE(error_of([&] { cat.load_registry(Json::parse(R"({"test-function": {"sin": "cos"}})"), "reg"); }).find(
                  "reg.test-function.sin"),
              std::string::npos);
    EXPECT_NE(error_of([&] { cat.load_registry(Json::parse(R"({"gadgets": {}})"), "reg"); }), "");
}

TEST(Catalog, UnknownParameterNamesItsPath) {
    const auto cat = Catalog::builtin();
    const std::string e =
        error_of([&] { cat.test_function(Json::parse(R"({"template": "sin", "params": {"frq": 2}})"), "test_function"); });
    EXPECT_NE(e.find("test_function.params.frq"), std::string::npos) << e;
}

TEST(Config, RoundTripsThroughItsEcho) {
    for (const auto& entry : fs::directory_iterator(IWL_CONFIG_DIR)) {
        if (entry.path().filename() == "registry.json") continue;
        auto c1 = Catalog::builtin();
        const ScenarioConfig a = load_config(entry.path().string(), c1);
        const Json echo = to_json(a);
        auto c2 = Catalog::builtin();
        if (!a.registry.empty())
            c2.load_registry(parse_json_text(read_file((entry.path().parent_path() / a.registry).string()), "r"));
        const ScenarioConfig b = parse_config(echo, c2);
        EXPECT_EQ(to_json(b).dump(), echo.dump()) << entry.path();
    }
}

TEST(Config, ConditionalFormsNeedACommonNoiseSplit) {
    const auto cat = Catalog::builtin();
    Json doc = Json::parse(kThm3);
    doc["formula"] = "thm4";
    const std::string e = error_of([&] { parse_config(doc, cat); });
    EXPECT_NE(e.find("state.common_brownian"), std::string::npos) << e;
    doc["state"] = Json::parse(R"({"template": "bm", "params": {"sigma": [0.5, 0.5]}, "common_brownian": 1})");
    EXPECT_NO_THROW(parse_config(doc, cat));
}

TEST(Config, UnknownKeysAndBadValuesNameTheirPath) {
    const auto cat = Catalog::builtin();
    Json doc = Json::parse(kThm3);
    doc["sizes"]["wrlds"] = 3;
    EXPECT_NE(error_of([&] { parse_config(doc, cat); }).find("sizes.wrlds"), std::string::npos);
    doc = Json::parse(kThm3);
    doc["time"]["steps"] = -4;
    EXPECT_NE(error_of([&] { parse_config(doc, cat); }).find("time.steps"), std::string::npos);
    doc = Json::parse(kThm3);
    doc["formula"] = "thm9";
    EXPECT_NE(error_of([&] { parse_config(doc, cat); }).find("formula"), std::string::npos);
    doc = Json::parse(kThm3);
    doc.erase("field");
    EXPECT_NE(error_of([&] { parse_config(doc, cat); }).find("field"), std::string::npos);
}

TEST(Config, SyntaxErrorsReportLineAndColumn) {
    const std::string e = error_of([] { parse_json_text("{\n  \"name\": \"x\",\n  \"seed\": ,\n}", "bad.json"); });
    EXPECT_NE(e.find("bad.json"), std::string::npos) << e;
    EXPECT_NE(e.find("line 3"), std::string::npos) << e;
    EXPECT_NE(e.find("column"), std::string::npos) << e;
}

TEST(Run, ReportIsByteIdenticalAcrossWorkerCounts) {
    const auto cat = Catalog::builtin();
    ScenarioConfig c = parse_config(Json::parse(kThm3), cat);
    c.workers = 1;
    const RunResult a = run(cat, c);
    c.workers = 4;
    const RunResult b = run(cat, c);
    EXPECT_EQ(a.report.dump(2), b.report.dump(2));
    EXPECT_EQ(a.terms_csv, b.terms_csv);
    EXPECT_TRUE(a.passed);
}

TEST(Run, SweepFitsTheDeclaredSlope) {
    const auto cat = Catalog::builtin();
    // a light-tailed state keeps the SE estimate itself stable at small M
    Json doc = Json::parse(kThm3);
    doc["state"] = Json::parse(R"({"template": "drifted-bm", "x0_sd": 0.3})");
    doc["sweep"] = Json::parse(
        R"({"parameter": "worlds", "levels": [20, 80, 320], "statistic": "standard_error", "expect_slope": [-0.8, -0.2]})");
    const RunResult r = run_sweep(cat, parse_config(doc, cat));
    EXPECT_TRUE(r.passed) << r.report.dump(2);
    EXPECT_EQ(r.terms_csv.substr(0, r.terms_csv.find('\n')), "level,standard_error");
    EXPECT_EQ(std::count(r.terms_csv.begin(), r.terms_csv.end(), '\n'), 4);
}

TEST(Executable, ExitCodesAndRunDirectory) {
    const fs::path dir = scratch("cli");
    {
        std::ofstream(dir / "ok.json") << kThm3;
        std::ofstream(dir / "bad.json") << "{ \"name\": }";
        Json fail = Json::parse(kThm3);
        fail["thresholds"] = {{"se_mult", 0.0}, {"c_sqrt_dt", 0.0}, {"abs_tol", 0.0}};
        std::ofstream(dir / "fail.json") << fail.dump();
    }
    EXPECT_EQ(run_cli("run " + (dir / "ok.json").string() + " --out " + (dir / "a").string(), dir / "log"), 0)
        << slurp(dir / "log");
    for (const char* f : {"report.json", "terms.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(run_cli("run " + (dir / "ok.json").string() + " --workers 3 --out " + (dir / "b").string(), dir / "log"), 0);
    EXPECT_EQ(slurp(dir / "a" / "report.json"), slurp(dir / "b" / "report.json"));

    EXPECT_EQ(run_cli("run " + (dir / "bad.json").string(), dir / "log"), 2);
    EXPECT_NE(slurp(dir / "log").find("line 1"), std::string::npos) << slurp(dir / "log");
    EXPECT_EQ(run_cli("run " + (dir / "fail.json").string() + " --out " + (dir / "c").string(), dir / "log"), 1)
        << slurp(dir / "log");
    EXPECT_EQ(run_cli("frobnicate", dir / "log"), 2);

    EXPECT_EQ(run_cli("catalog", dir / "cat1"), 0);
    std::ofstream(dir / "empty.json") << "{}";
    EXPECT_EQ(run_cli("catalog --registry " + (dir / "empty.json").string(), dir / "cat2"), 0);
    EXPECT_EQ(slurp(dir / "cat1"), slurp(dir / "cat2"));
    fs::remove_all(dir);
}
