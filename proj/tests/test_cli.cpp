#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <dmgp/cli.hpp>

using namespace dmgp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string log;
    std::string errs;
};

Outcome invoke(std::vector<std::string> args)
{
    args.insert(args.begin(), "dmgp");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream log, errs;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), log, errs);
    return {code, log.str(), errs.str()};
}

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("dmgp_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const fs::path& p, const std::string& text)
{
    std::ofstream out(p);
    out << text;
}

std::size_t lines(const fs::path& p)
{
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string l; std::getline(in, l);)
        ++n;
    return n;
}

// Small fit settings so the pipeline tests stay fast.
const char* quick_fit = R"("fit": {"k_out": 1, "k_in": 3, "warm_start_epochs": 5})";

} // namespace

TEST(Cli, SimulateWritesCaseOneData)
{
    const auto dir = scratch("simulate");
    const Outcome r = invoke({"simulate", "--out", dir.string(), "--seed", "4"});
    ASSERT_EQ(r.code, 0) << r.errs;
    const Dataset d = read_dataset(dir / "dataset.csv");
    EXPECT_EQ(d.num_outputs(), 5);
    for (const auto& s : d.sources)
        EXPECT_EQ(s.size(), 130);
    EXPECT_EQ(d.target.size(), 100);
    const QueryPoints q = read_queries(dir / "gaps.csv");
    EXPECT_EQ(q.times.size(), 30u);
    EXPECT_TRUE(q.truth.has_value());
    EXPECT_TRUE(fs::exists(dir / "resolved_config.json"));
}

TEST(Cli, SimulateIsByteIdenticalOnRepeat)
{
    const auto a = scratch("repeat_a");
    const auto b = scratch("repeat_b");
    ASSERT_EQ(invoke({"simulate", "--out", a.string(), "--seed", "9"}).code, 0);
    ASSERT_EQ(invoke({"simulate", "--out", b.string(), "--seed", "9", "--jobs", "3"}).code, 0);
    EXPECT_EQ(slurp(a / "dataset.csv"), slurp(b / "dataset.csv"));
    EXPECT_EQ(slurp(a / "gaps.csv"), slurp(b / "gaps.csv"));
}

TEST(Cli, CaseTwoWithFourCopiesHasSeventeenOutputs)
{
    const auto dir = scratch("case2");
    write(dir / "c.json", R"({"case": {"case": 2, "k": 4}})");
    ASSERT_EQ(invoke({"simulate", "--config", (dir / "c.json").string(), "--out", dir.string()}).code, 0);
    EXPECT_EQ(read_dataset(dir / "dataset.csv").num_outputs(), 17);
}

TEST(Cli, UnknownKeysAndBadInputsExitWithOne)
{
    const auto dir = scratch("errors");
    write(dir / "bad.json", R"({"fit": {"k_inn": 3}})");
    const Outcome r = invoke({"simulate", "--config", (dir / "bad.json").string(), "--out", dir.string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.errs.find("fit.k_inn"), std::string::npos) << r.errs;

    write(dir / "wrong.json", R"({"command": "fit"})");
    EXPECT_EQ(invoke({"simulate", "--config", (dir / "wrong.json").string(), "--out", dir.string()}).code, 1);

    write(dir / "bad.csv", "output_id,t,x1,y\n0,1,0.5,1\n1,1,zz,2\n");
    write(dir / "fit.json", std::string("{\"data\": \"") + (dir / "bad.csv").string() + "\"}");
    const Outcome p = invoke({"fit", "--config", (dir / "fit.json").string(), "--out", dir.string()});
    EXPECT_EQ(p.code, 1);
    EXPECT_NE(p.errs.find("line 3"), std::string::npos) << p.errs;

    EXPECT_NE(invoke({"fit", "--out", dir.string()}).code, 0); // no data
    EXPECT_NE(invoke({"--out", dir.string()}).code, 0);        // no subcommand
}

TEST(Cli, FitThenPredictMatchesTheLibrary)
{
    const auto dir = scratch("fit_predict");
    ASSERT_EQ(invoke({"simulate", "--out", dir.string(), "--seed", "2"}).code, 0);
    const auto fdir = dir / "model";
    write(dir / "fitcfg.json", std::string("{\"data\": \"") + (dir / "dataset.csv").string() + "\", " + quick_fit + "}");
    const Outcome f = invoke({"fit", "--config", (dir / "fitcfg.json").string(), "--out", fdir.string(), "--seed", "5"});
    ASSERT_EQ(f.code, 0) << f.errs;
    EXPECT_TRUE(fs::exists(fdir / "gamma.csv"));
    EXPECT_EQ(lines(fdir / "trace.csv"), 2u);
    write(dir / "predict.json", std::string("{\"data\": \"") + (dir / "dataset.csv").string() + "\", \"model\": \""
                                    + (fdir / "fit.json").string() + "\", \"queries\": \"" + (dir / "gaps.csv").string()
                                    + "\"}");
    const auto odir = dir / "out";
    const Outcome p = invoke({"predict", "--config", (dir / "predict.json").string(), "--out", odir.string()});
    ASSERT_EQ(p.code, 0) << p.errs;
    EXPECT_TRUE(fs::exists(odir / "metrics.csv"));

    const Dataset data = read_dataset(dir / "dataset.csv");
    FitConfig fc = cli::defaults_for("fit").fit;
    fc.k_out = 1;
    fc.k_in = 3;
    fc.warm_start_epochs = 5;
    fc.seed = 5;
    const SpikeSlabConfig ss = cli::defaults_for("fit").spike_slab.get();
    const FitResult lib = fit(data, ss, fc);
    const QueryPoints q = read_queries(dir / "gaps.csv");
    const auto expect = predict_at(lib, data, q.times, q.inputs, ss);

    std::ifstream in(odir / "predictions.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t,mean,variance");
    for (std::size_t k = 0; k < expect.size(); ++k) {
        ASSERT_TRUE(std::getline(in, line));
        const auto cells = dmgp::detail::split_csv(line);
        ASSERT_EQ(cells.size(), 3u);
        EXPECT_EQ(std::stoi(cells[0]), q.times[k]);
        EXPECT_NEAR(std::stod(cells[1]), expect[k].mean, 1e-12 * (1.0 + std::abs(expect[k].mean)));
        EXPECT_NEAR(std::stod(cells[2]), expect[k].variance, 1e-12 * (1.0 + expect[k].variance));
    }
}

TEST(Cli, PredictionAtAnObservedStampShrinksVariance)
{
    const auto dir = scratch("observed");
    ASSERT_EQ(invoke({"simulate", "--out", dir.string(), "--seed", "3"}).code, 0);
    write(dir / "fit.json", std::string("{\"data\": \"") + (dir / "dataset.csv").string() + "\", " + quick_fit + "}");
    const auto fdir = dir / "model";
    ASSERT_EQ(invoke({"fit", "--config", (dir / "fit.json").string(), "--out", fdir.string()}).code, 0);
    const Dataset data = read_dataset(dir / "dataset.csv");
    QueryPoints q;
    q.times = {data.target.times[5]};
    q.inputs = data.target.inputs.row(5);
    write_queries(dir / "q.csv", q);
    write(dir / "p.json", std::string("{\"data\": \"") + (dir / "dataset.csv").string() + "\", \"model\": \""
                              + (fdir / "fit.json").string() + "\", \"queries\": \"" + (dir / "q.csv").string() + "\"}");
    const auto odir = dir / "out";
    ASSERT_EQ(invoke({"predict", "--config", (dir / "p.json").string(), "--out", odir.string()}).code, 0);
    std::ifstream in(odir / "predictions.csv");
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    const double var = std::stod(dmgp::detail::split_csv(line)[2]);

    SpikeSlabConfig ss;
    const FitResult f = read_fit(fdir / "fit.json", data, &ss);
    const TargetKernelsAt k = params_at(f, data, q.times[0], ss);
    const KernelParams kp = f.params.constrained();
    double prior = kp.target_noise;
    for (Eigen::Index i = 0; i < k.amp.size(); ++i)
        prior += k.amp(i) * k.amp(i) * std::pow(2.0, -0.5 * static_cast<double>(data.dim()));
    EXPECT_LT(var, prior);
}

TEST(Cli, TuneWritesSixRows)
{
    const auto dir = scratch("tune");
    ASSERT_EQ(invoke({"simulate", "--out", dir.string()}).code, 0);
    write(dir / "t.json", std::string("{\"data\": \"") + (dir / "dataset.csv").string() + "\", " + quick_fit
                              + R"(, "tune": {"cell_k_in": 2, "refit": false}})");
    const auto odir = dir / "out";
    const Outcome r = invoke({"tune", "--config", (dir / "t.json").string(), "--out", odir.string(), "--jobs", "2"});
    ASSERT_EQ(r.code, 0) << r.errs;
    EXPECT_EQ(lines(odir / "tuning.csv"), 7u);
    EXPECT_FALSE(fs::exists(odir / "fit.json"));
}

TEST(Cli, ResolvedConfigReproducesTheRun)
{
    const auto dir = scratch("resolved");
    ASSERT_EQ(invoke({"simulate", "--out", dir.string(), "--seed", "11"}).code, 0);
    write(dir / "f.json", std::string("{\"data\": \"") + (dir / "dataset.csv").string() + "\", " + quick_fit + "}");
    const auto a = dir / "a";
    const auto b = dir / "b";
    ASSERT_EQ(invoke({"fit", "--config", (dir / "f.json").string(), "--out", a.string(), "--seed", "8"}).code, 0);
    ASSERT_EQ(invoke({"fit", "--config", (a / "resolved_config.json").string(), "--out", b.string()}).code, 0);
    const auto ja = nlohmann::json::parse(slurp(a / "fit.json"));
    const auto jb = nlohmann::json::parse(slurp(b / "fit.json"));
    EXPECT_EQ(ja["sources"], jb["sources"]);
    EXPECT_EQ(ja["target"], jb["target"]);
    EXPECT_EQ(ja["gamma"], jb["gamma"]);
    EXPECT_EQ(slurp(a / "gamma.csv"), slurp(b / "gamma.csv"));
    auto ra = nlohmann::json::parse(slurp(a / "resolved_config.json"));
    auto rb = nlohmann::json::parse(slurp(b / "resolved_config.json"));
    EXPECT_EQ(ra["seed"], 8);
    ra.erase("out");
    rb.erase("out");
    EXPECT_EQ(ra, rb);
}

TEST(Cli, BenchmarkWritesTidyRows)
{
    const auto dir = scratch("bench");
    write(dir / "b.json", std::string("{") + quick_fit
                              + R"(, "case": {"n": 40, "gap_windows": [[10, 30]]}, "benchmark": {"methods": ["GP", "DMGP-SS"], "replications": 2}, "gp": {"epochs": 20}})");
    const Outcome r = invoke({"benchmark", "--config", (dir / "b.json").string(), "--out", dir.string(), "--jobs", "1"});
    ASSERT_EQ(r.code, 0) << r.errs;
    EXPECT_EQ(lines(dir / "benchmark.csv"), 1u + 2u * 2u * 3u);
    EXPECT_EQ(lines(dir / "summary.csv"), 3u);
}

TEST(Cli, ShippedConfigsLoad)
{
    for (const char* name : {"case1_benchmark", "case2_benchmark", "segmented_benchmark", "rl", "tune"}) {
        const fs::path p = fs::path(DMGP_SOURCE_DIR) / "configs" / (std::string(name) + ".json");
        cli::RunConfig c;
        EXPECT_NO_THROW(c.load(nlohmann::json::parse(slurp(p)))) << name;
    }
}
