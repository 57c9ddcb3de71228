#include <dctkit/io.hpp>

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(DCTKIT_CLI) + " " + args + " 2>/dev/null";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) {
        return r;
    }
    std::array<char, 4096> buf{};
    std::size_t got = 0;
    while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) {
        r.out.append(buf.data(), got);
    }
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string line;
    while (std::getline(is, line)) {
        out.push_back(line);
    }
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string temp(const std::string& name) { return ::testing::TempDir() + "dctkit_cli_" + name; }

} // namespace

TEST(Cli, SampleSdsGivesUniqueIndices) {
    const std::string xyz = temp("cloud.xyz");
    {
        std::ofstream os(xyz);
        for (int i = 0; i < 200; ++i) {
            os << (i % 13) * 0.1 << ' ' << (i % 7) * 0.2 << ' ' << i * 0.01 << '\n';
        }
    }
    const auto r = run("sample --in " + xyz + " --s 64 --method sds");
    ASSERT_EQ(r.code, 0);
    const auto rows = lines(r.out);
    ASSERT_EQ(rows.size(), 65u);
    EXPECT_EQ(rows[0], "index");
    EXPECT_EQ(std::set<std::string>(rows.begin() + 1, rows.end()).size(), 64u);
    EXPECT_EQ(r.out.back(), '\n');
}

TEST(Cli, SampleScoreCsv) {
    const std::string out = temp("scores.csv");
    ASSERT_EQ(run("sample --synthetic two-gaussians --points 40 --s 5 --out " + out).code, 0);
    const auto rows = lines(slurp(out));
    ASSERT_EQ(rows.size(), 41u);
    EXPECT_EQ(rows[0], "point,density,delta,score,selected");
    int selected = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        selected += rows[i].back() == '1';
    }
    EXPECT_EQ(selected, 5);
    ASSERT_EQ(run("sample --synthetic two-gaussians --points 40 --s 5 --method fps --out " + out).code, 0);
    EXPECT_EQ(lines(slurp(out))[0], "point,min_sq_dist,selected");
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("sample --synthetic plane+sphere --s 4 --bogus").code, 2);
    EXPECT_EQ(run("sample --synthetic plane+sphere").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("sample --synthetic plane+sphere --points 8 --s 9").code, 1);
    EXPECT_EQ(run("sample --in /nonexistent.xyz --s 1").code, 1);
    EXPECT_EQ(run("forward --synthetic plane+sphere --dims 0").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, GradcheckShippedConfigPasses) {
    const auto r = run("gradcheck --seed 7");
    EXPECT_EQ(r.code, 0);
    const auto rows = lines(r.out);
    ASSERT_GT(rows.size(), 10u);
    EXPECT_EQ(rows[0], "parameter,entries,one_sided,skipped,max_rel_error,status");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_NE(rows[i].find(",PASS"), std::string::npos) << rows[i];
    }
}

TEST(Cli, GradcheckReportsFailure) {
    EXPECT_EQ(run("gradcheck --seed 7 --tol 1e-30").code, 1);
}

TEST(Cli, AblateEmitsOneRowPerVariant) {
    const auto r = run("ablate");
    ASSERT_EQ(r.code, 0);
    const auto rows = lines(r.out);
    ASSERT_EQ(rows.size(), 9u);
    EXPECT_EQ(rows[0].rfind("variant,flags,", 0), 0u);
    EXPECT_EQ(rows[8].rfind("full,", 0), 0u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].substr(rows[i].size() - 3), ",ok") << rows[i];
    }
}

TEST(Cli, TrainWritesMetricsAndCheckpointThenForward) {
    const std::string metrics = temp("metrics.csv");
    const std::string ckpt = temp("toy.ckpt");
    ASSERT_EQ(run("train-toy --epochs 40 --seed 3 --metrics " + metrics + " --checkpoint " + ckpt).code, 0);
    const auto rows = lines(slurp(metrics));
    ASSERT_EQ(rows.size(), 41u);
    EXPECT_EQ(rows[0], "epoch,loss,accuracy,lr");
    EXPECT_EQ(lines(slurp(ckpt))[0], "DCTKIT v1");

    const auto pred = run("forward --synthetic plane+sphere --points 256 --seed 3 --checkpoint " + ckpt);
    ASSERT_EQ(pred.code, 0);
    EXPECT_EQ(lines(pred.out).size(), 256u);

    const auto trace = run("cluster --synthetic plane+sphere --seed 3 --checkpoint " + ckpt);
    ASSERT_EQ(trace.code, 0);
    std::istringstream is(trace.out);
    const auto maps = dctkit::read_cluster_maps(is);
    ASSERT_EQ(maps.size(), 1u);
    EXPECT_EQ(maps[0].points(), 256u);
    EXPECT_NO_THROW(maps[0].validate());

    EXPECT_EQ(run("forward --synthetic plane+sphere --stages 2 --checkpoint " + ckpt).code, 1);
}

TEST(Cli, DivergedTrainingExitsWithFailure) {
    EXPECT_EQ(run("train-toy --epochs 20 --lr 1e38 --checkpoint ''").code, 1);
}

TEST(Cli, BenchCsv) {
    const auto r = run("bench --n 256 --s 64 --d 8 --k 8 --reps 5 --blocks");
    ASSERT_EQ(r.code, 0);
    const auto rows = lines(r.out);
    ASSERT_EQ(rows.size(), 8u);
    EXPECT_EQ(rows[0], "method,n,s,d,k,reps,median_ms,ratio_vs_baseline,threads,seed");
    EXPECT_EQ(rows[1].rfind("fps,256,64,", 0), 0u);
    EXPECT_EQ(rows[2].rfind("sds,256,64,8,8,5,", 0), 0u);
}

TEST(Cli, OutputsAreByteIdenticalAcrossRuns) {
    for (const std::string args : {"sample --synthetic airplane-toy --points 90 --s 20",
                                   "cluster --synthetic airplane-toy --points 90 --seed 4",
                                   "forward --synthetic two-gaussians --points 60 --seed 5",
                                   "train-toy --epochs 3 --points 64 --checkpoint ''", "ablate --seed 2"}) {
        const auto a = run(args);
        const auto b = run(args);
        EXPECT_EQ(a.code, 0) << args;
        EXPECT_EQ(a.out, b.out) << args;
        EXPECT_FALSE(a.out.empty()) << args;
    }
}

TEST(Cli, ConfigFileLosesToFlags) {
    const std::string cfg = temp("settings.ini");
    {
        std::ofstream(cfg) << "seed=11\nsample.s=10\nsample.method=fps\n";
    }
    const auto from_file = run("--config " + cfg + " sample --synthetic two-gaussians --points 50");
    ASSERT_EQ(from_file.code, 0);
    EXPECT_EQ(lines(from_file.out).size(), 11u);
    const auto flagged = run("--config " + cfg + " sample --synthetic two-gaussians --points 50 --s 3");
    EXPECT_EQ(lines(flagged.out).size(), 4u);
    EXPECT_EQ(from_file.out,
              run("sample --synthetic two-gaussians --points 50 --s 10 --method fps --seed 11").out);
}
