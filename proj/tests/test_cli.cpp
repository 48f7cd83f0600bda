#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gdsr/cli.hpp"

using namespace gdsr;

namespace {

struct CliRun {
    int code;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "gdsr");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string dir(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / "gdsr_test_cli" / name;
    std::filesystem::remove_all(p);
    return p.string();
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace

TEST(Cli, HelpAndUsageErrors)
{
    const CliRun help = cli({"--help"});
    EXPECT_EQ(help.code, 0);
    EXPECT_NE(help.out.find("sweep"), std::string::npos);
    EXPECT_EQ(cli({}).code, 1);
    EXPECT_EQ(cli({"frobnicate"}).code, 1);
    EXPECT_EQ(cli({"sample", "--steps", "0"}).code, 1);
    EXPECT_EQ(cli({"sample", "--lambda-avg", "2"}).code, 1);
    EXPECT_EQ(cli({"plotdata"}).code, 1);
}

TEST(Cli, RuntimeErrorsReturnTwo)
{
    const CliRun r = cli({"sample", "--config", "/no/such/file.ini"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("error:"), std::string::npos);
    EXPECT_EQ(cli({"sample", "--method", "magic", "--out", dir("bad")}).code, 2);
    EXPECT_EQ(cli({"eval", "--out", dir("missing")}).code, 2);
}

TEST(Cli, BuildOpWritesAReadableOperator)
{
    const std::string d = dir("op");
    std::filesystem::create_directories(d);
    const std::string path = d + "/a.ztsr";
    const CliRun r = cli({"build-op", "--height", "8", "--width", "12", "--factor", "4", "--out", path});
    ASSERT_EQ(r.code, 0) << r.err;
    const DegradationOperator a = read_operator(path);
    EXPECT_EQ(a.output_shape(), (Shape{1, 2, 3}));
    EXPECT_NE(r.out.find("rank 6"), std::string::npos);
}

TEST(Cli, SampleIsReproducible)
{
    const std::string a = dir("sample_a");
    const std::string b = dir("sample_b");
    for (const auto& d : {a, b}) {
        const CliRun r = cli({"sample", "--method", "dps", "--steps", "10", "--seed", "5", "--rho", "0.6", "--out", d});
        ASSERT_EQ(r.code, 0) << r.err;
        EXPECT_NE(r.out.find("lr_psnr_db="), std::string::npos);
    }
    EXPECT_EQ(slurp(a + "/sample.ztsr"), slurp(b + "/sample.ztsr"));
    EXPECT_EQ(slurp(a + "/trace.csv"), slurp(b + "/trace.csv"));
    EXPECT_TRUE(std::filesystem::exists(a + "/sample.pgm"));
}

TEST(Cli, SweepEvalAndPlotdata)
{
    const std::string d = dir("sweep");
    const std::string cfg = d + ".ini";
    {
        std::ofstream f(cfg);
        f << "[problem]\nheight = 8\nwidth = 8\n[sampler]\nmethods = unguided, ddnm\nsteps = 10\n[run]\nchains = 2\n";
    }
    const CliRun s = cli({"sweep", "--config", cfg, "--out", d});
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_NE(s.out.find("4 rows"), std::string::npos);
    const CliRun e = cli({"eval", "--out", d});
    EXPECT_EQ(e.code, 0) << e.err;
    EXPECT_NE(e.out.find("checked=4"), std::string::npos);
    const CliRun p = cli({"plotdata", d + "/results.csv"});
    ASSERT_EQ(p.code, 0) << p.err;
    EXPECT_NE(p.out.find("# consistency-bars"), std::string::npos);
    const CliRun q = cli({"plotdata", d + "/results.csv", "--out", d + "/plots"});
    ASSERT_EQ(q.code, 0) << q.err;
    EXPECT_TRUE(std::filesystem::exists(d + "/plots/tradeoff-curve.dat"));
}

TEST(Cli, EvalDetectsTamperedResults)
{
    const std::string d = dir("tamper");
    ASSERT_EQ(cli({"sweep", "--config", "tab1-toy", "--method", "ddnm", "--steps", "5", "--out", d}).code, 0);
    std::ifstream in(d + "/results.csv");
    CsvTable t = read_csv(in);
    in.close();
    t.rows[0][t.column("lr_psnr_db")] = "12";
    {
        std::ofstream out(d + "/results.csv");
        out << kResultsHeader << '\n';
        for (const auto& r : t.rows) {
            for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
            out << '\n';
        }
    }
    EXPECT_EQ(cli({"eval", "--out", d}).code, 2);
}
