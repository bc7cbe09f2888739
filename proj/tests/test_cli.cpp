#include <smoe/analysis.hpp>
#include <smoe/depth_io.hpp>
#include <smoe/error.hpp>
#include <smoe/weights.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace smoe;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

fs::path workdir()
{
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "smoe_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run smoe_run(const std::string& args)
{
    const auto out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
    const std::string cmd = std::string("\"") + SMOE_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string depth_input()
{
    const auto p = path("input.pgm");
    if (!fs::exists(p)) {
        Rng rng(5);
        DepthImage img(160, 120);
        for (std::size_t r = 0; r < 120; ++r)
            for (std::size_t c = 0; c < 160; ++c)
                img.at(r, c) = c < 80 ? 0.8 + 0.001 * double(r) : 2.4 + rng.uniform(0.0, 0.05);
        write_pgm16(p, img);
    }
    return p;
}

} // namespace

TEST(Cli, ParamsTable)
{
    const auto r = smoe_run("params");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("dense_small,dense,256x128x64,193484,193484,193024"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("dense_xl,dense,1024x620x512,1565816,1565816,1563648"), std::string::npos);
    EXPECT_NE(r.out.find("moe_top4of16,moe,512x256x256,2485516,912652"), std::string::npos);
}

TEST(Cli, CategorizedExitCodes)
{
    EXPECT_EQ(smoe_run("params --net bogus").code, static_cast<int>(ErrorKind::InvalidArgument));
    EXPECT_NE(smoe_run("").code, 0);
    EXPECT_NE(smoe_run("frobnicate").code, 0);
    const auto r = smoe_run("bench --passes 0 --net small --batch 8");
    EXPECT_EQ(r.code, static_cast<int>(ErrorKind::InvalidArgument));
    EXPECT_NE(r.err.find("nothing to measure"), std::string::npos) << r.err;
}

TEST(Cli, BenchSmallRun)
{
    const auto csv = path("bench.csv");
    const auto r = smoe_run("bench --batch 32 --passes 2 --warmup 1 --net xl --net small --net moe --out " + csv);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto text = slurp(csv);
    EXPECT_EQ(count_lines(text), 4u);
    EXPECT_LT(text.find("dense_small"), text.find("dense_xl"));
    EXPECT_NE(r.err.find("% slower"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("batch reduced"), std::string::npos);
}

TEST(Cli, DepthDeployReproducibleAndSized)
{
    const auto in = depth_input();
    ASSERT_EQ(smoe_run("depth " + in + " --mode deploy --blur-sigma 1.0 --seed 1 --out " + path("a.pfm")).code, 0);
    ASSERT_EQ(smoe_run("depth " + in + " --mode deploy --blur-sigma 1.0 --seed 2 --out " + path("b.pfm")).code, 0);
    const auto a = slurp(path("a.pfm"));
    EXPECT_EQ(a, slurp(path("b.pfm")));
    EXPECT_EQ(a.rfind("Pf\n87 58\n", 0), 0u);
    const auto img = read_depth(path("a.pfm"));
    EXPECT_GE(img.min(), -0.5);
    EXPECT_LE(img.max(), 0.5);
}

TEST(Cli, DepthTrainSeedsDifferAndStagesDump)
{
    const auto in = depth_input();
    const auto cfg = path("depth.cfg");
    std::ofstream(cfg) << "depth_artifact = 0.01\ncontour_artifact = 0.5\n";
    ASSERT_EQ(smoe_run("depth " + in + " --mode train --config " + cfg + " --seed 1 --out " + path("t1.pfm") + " --dump-stages " +
                       path("stages"))
                  .code,
              0);
    ASSERT_EQ(smoe_run("depth " + in + " --mode train --config " + cfg + " --seed 2 --out " + path("t2.pfm")).code, 0);
    EXPECT_NE(slurp(path("t1.pfm")), slurp(path("t2.pfm")));
    std::size_t dumps = 0;
    for (const auto& e : fs::directory_iterator(path("stages")))
        dumps += e.path().extension() == ".pfm";
    EXPECT_EQ(dumps, 7u);
}

TEST(Cli, DepthMalformedInput)
{
    const auto bad = path("bad.pgm");
    std::ofstream(bad, std::ios::binary) << "P5\n160 120\n65535\n\x01\x02\x03";
    const auto r = smoe_run("depth " + bad + " --out " + path("x.pfm"));
    EXPECT_EQ(r.code, static_cast<int>(ErrorKind::Format));
    EXPECT_NE(r.err.find("byte offset"), std::string::npos) << r.err;
}

TEST(Cli, TrainLiteCsv)
{
    const auto cfg = path("train.cfg");
    std::ofstream(cfg) << "epochs = 40\nsamples = 128\n";
    const auto a = smoe_run("train-lite --config " + cfg + " --w-importance 0 --seed 3");
    ASSERT_EQ(a.code, 0) << a.err;
    std::istringstream lines(a.out);
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line, "epoch,task_loss,importance_loss,cv,status");
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');)
            cells.push_back(c);
        ASSERT_EQ(cells.size(), 5u);
        EXPECT_EQ(std::stod(cells[2]), 0.0);
        EXPECT_EQ(cells[4], "ok");
    }
    EXPECT_EQ(rows, 40u);
    EXPECT_EQ(smoe_run("train-lite --config " + cfg + " --w-importance 0 --seed 3").out, a.out);
    EXPECT_NE(smoe_run("train-lite --config " + cfg + " --w-importance 0 --seed 4").out, a.out);
}

TEST(Cli, TrainLiteDivergenceFlagged)
{
    const auto cfg = path("diverge.cfg");
    std::ofstream(cfg) << "epochs = 200\nlr = 1e6\n";
    const auto r = smoe_run("train-lite --config " + cfg);
    EXPECT_EQ(r.code, static_cast<int>(ErrorKind::Numerical));
    EXPECT_NE(r.out.find(",,,,diverged"), std::string::npos) << r.out;
}

TEST(Cli, InitAnalyzeRoundTrip)
{
    const auto w = path("moe.smpw");
    ASSERT_EQ(smoe_run("init --net moe --seed 9 --out " + w).code, 0);
    const auto net = load_weights<double>(w);
    EXPECT_TRUE(net.is_moe());

    Rng rng(10);
    Batch<float> seq(6, 591);
    fill_uniform(rng, seq.values(), -1.0f, 1.0f);
    write_obs_sequence(path("seq.bin"), seq);
    const auto r = smoe_run("analyze --weights " + w + " --obs " + path("seq.bin") + " --out " + path("an"));
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream tin(path("an_trace.csv"));
    const auto trace = read_trace_csv(tin, 4);
    EXPECT_EQ(trace.timesteps(), 6u);
    EXPECT_EQ(trace.n, 16u);
    std::ifstream sin(path("an_sensitivity.csv"));
    const auto rep = read_report_csv(sin);
    EXPECT_EQ(rep.experts(), 16u);
    EXPECT_EQ(rep.spans.size(), 8u);
    EXPECT_EQ(rep.spans[0].name, "proprio");
    EXPECT_TRUE(fs::exists(path("an_utilization.csv")));

    write_obs_sequence(path("empty.bin"), Batch<float>(0, 591));
    ASSERT_EQ(smoe_run("analyze --weights " + w + " --obs " + path("empty.bin") + " --out " + path("empty")).code, 0);
    EXPECT_EQ(count_lines(slurp(path("empty_trace.csv"))), 1u);
}

TEST(Cli, AnalyzeRejectsDenseAndCorruptWeights)
{
    const auto w = path("dense.smpw");
    ASSERT_EQ(smoe_run("init --net small --out " + w).code, 0);
    write_obs_sequence(path("one.bin"), Batch<float>(1, 591));
    EXPECT_EQ(smoe_run("analyze --weights " + w + " --obs " + path("one.bin") + " --out " + path("d")).code,
              static_cast<int>(ErrorKind::SpecMismatch));

    auto bytes = slurp(w);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream(path("corrupt.smpw"), std::ios::binary) << bytes;
    EXPECT_EQ(smoe_run("analyze --weights " + path("corrupt.smpw") + " --obs " + path("one.bin") + " --out " + path("c")).code,
              static_cast<int>(ErrorKind::Checksum));
}

TEST(Cli, RewardsCsv)
{
    const auto traj = path("traj.txt");
    std::ofstream(traj) << "walking_env 0\ncommand 0.5\nrobot_pos 0 0 0\ngoal_pos 1 0 0\n"
                           "yaw_goal 0\nang_vel 0 0 0\nprojected_gravity 0 0 -1\n"
                           "dof_pos 0 0 0 0 0 0 0 0 0 0 0 0\ndefault_dof_pos 0 0 0 0 0 0 0 0 0 0 0 0\n"
                           "dof_vel 0 0 0 0 0 0 0 0 0 0 0 0\ndof_vel_prev 0 0 0 0 0 0 0 0 0 0 0 0\n"
                           "action 0 0 0 0 0 0 0 0 0 0 0 0\naction_prev 0 0 0 0 0 0 0 0 0 0 0 0\n"
                           "torque 0 0 0 0 0 0 0 0 0 0 0 0\ntorque_prev 0 0 0 0 0 0 0 0 0 0 0 0\n"
                           "contact_forces 0 0 0 0 0 0\ncollision_bodies 0\nfeet_bodies 1\n"
                           "foot_positions 0 0 0 0 0 0 0 0 0 0 0 0\nfoot_contact 0 0 0 0\nedge_map 0 0 1 1 1 0\n"
                           "step\nyaw 0\nlin_vel 0.5 0 0\n"
                           "step\nyaw 1\nlin_vel 0 0 0\n";
    const auto r = smoe_run("rewards " + traj + " --flooring trajectory");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_lines(r.out), 3u);
    EXPECT_NE(r.err.find("trajectory flooring"), std::string::npos);
    EXPECT_EQ(smoe_run("rewards " + traj + " --flooring episode").code, static_cast<int>(ErrorKind::InvalidArgument));
}
