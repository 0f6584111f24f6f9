#include <sys/wait.h>

#include <gtest/gtest.h>

#include "pltl/pipeline.hpp"
#include "test_util.hpp"

using namespace pltl;
using namespace pltl::test;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult cli(const std::string& args, const fs::path& work) {
  const auto out = work / "stdout.txt", err = work / "stderr.txt";
  const std::string cmd = std::string("\"") + PLTL_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Every regular file under dir, by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    work_ = scratch_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    session_ = work_ / "session";
    write_session(generate_session(easy_script("clisess", 23, 3, 8)), session_);
  }
  CliResult exec(const std::string& args) { return cli(args, work_); }
  fs::path manifest() const { return session_ / "manifest.json"; }

  fs::path work_, session_;
};

}  // namespace

TEST_F(Cli, VersionAndHelp) {
  auto r = exec("--version");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(kToolVersion), std::string::npos);
  EXPECT_EQ(exec("diarize").code != 0, true);
}

TEST_F(Cli, DiarizeScoredAndReproducible) {
  const auto inputs = tree(session_);
  auto r = exec("diarize -m " + q(manifest()) + " -o " + q(work_ / "a") + " --ref " + q(session_ / "ref_channels.rttm") +
               " --sad external -j 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("average DER"), std::string::npos);
  const auto dir = work_ / "a" / "clisess";
  const auto j = nlohmann::json::parse(slurp(dir / "session.json"));
  EXPECT_TRUE(j["scoring"]["average_der_percent"].is_number());
  EXPECT_EQ(j["multi_primary_frames"], 0);

  // Re-running from run.json with more jobs reproduces every byte.
  r = exec("diarize -m " + q(manifest()) + " -o " + q(work_ / "b") + " --ref " + q(session_ / "ref_channels.rttm") +
          " -c " + q(dir / "run.json") + " -j 3");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(tree(dir), tree(work_ / "b" / "clisess"));
  EXPECT_EQ(tree(session_), inputs);

  r = exec("analyze -s " + q(dir) + " -t " + q(session_ / "truth.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto a = nlohmann::json::parse(slurp(dir / "analysis.json"));
  EXPECT_EQ(a["turns"]["channels"].size(), 3u);
}

TEST_F(Cli, ChannelSubset) {
  auto r = exec("diarize -m " + q(manifest()) + " -o " + q(work_ / "o") + " --channels 2,3");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(work_ / "o" / "clisess" / "session.json"));
  ASSERT_EQ(j["channels"].size(), 2u);
  EXPECT_EQ(j["channels"][0]["channel_id"], 2);
  EXPECT_EQ(j["channels"][1]["channel_id"], 3);
  EXPECT_EQ(exec("diarize -m " + q(manifest()) + " -o " + q(work_ / "o2") + " --channels 9").code, 2);
  EXPECT_FALSE(fs::exists(work_ / "o2" / "clisess"));
}

TEST_F(Cli, ExitCodes) {
  fs::remove(session_ / "ch2.wav");
  auto r = exec("diarize -m " + q(manifest()) + " -o " + q(work_ / "o"));
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("ch2.wav"), std::string::npos);
  EXPECT_FALSE(fs::exists(work_ / "o" / "clisess"));

  spit(work_ / "bad_manifest.json", R"({"session_id": "x", "channels": []})");
  EXPECT_EQ(exec("diarize -m " + q(work_ / "bad_manifest.json") + " -o " + q(work_ / "o")).code, 2);
  spit(work_ / "broken.json", "{not json");
  EXPECT_EQ(exec("diarize -m " + q(work_ / "broken.json") + " -o " + q(work_ / "o")).code, 2);

  spit(work_ / "cfg.json", R"({"g3": {"window": 1.0}})");
  r = exec("diarize -m " + q(manifest()) + " -o " + q(work_ / "o") + " -c " + q(work_ / "cfg.json"));
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("/g3/window"), std::string::npos);
  EXPECT_EQ(exec("diarize -m " + q(manifest()) + " -o " + q(work_ / "o") + " --lpc-order 0").code, 4);
}

TEST_F(Cli, ConfigFromEnvironment) {
  spit(work_ / "cfg.json", R"({"lpc_order": -3})");
  const std::string env = "PLTLDIAR_CONFIG=" + q(work_ / "cfg.json") + " ";
  const auto out = work_ / "stdout.txt";
  const std::string cmd = env + "\"" + PLTL_CLI + "\" diarize -m " + q(manifest()) + " -o " + q(work_ / "o") +
                          " >" + q(out) + " 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 4);
}

TEST_F(Cli, SynthDeterministic) {
  ASSERT_EQ(exec("synth --speakers 3 --turns 6 --session-id s1 --seed 5 -o " + q(work_ / "s1")).code, 0);
  ASSERT_EQ(exec("synth --speakers 3 --turns 6 --session-id s1 --seed 5 -o " + q(work_ / "s2")).code, 0);
  ASSERT_EQ(exec("synth --speakers 3 --turns 6 --session-id s1 --seed 6 -o " + q(work_ / "s3")).code, 0);
  const auto a = tree(work_ / "s1");
  EXPECT_EQ(a, tree(work_ / "s2"));
  EXPECT_NE(a.at("ch1.wav"), tree(work_ / "s3").at("ch1.wav"));
  for (const char* f : {"manifest.json", "ch3.wav", "sad_ch1.lab", "ref_channels.rttm", "ref_session.rttm", "truth.json"})
    EXPECT_TRUE(a.count(f)) << f;
  EXPECT_NO_THROW(load_manifest(work_ / "s1" / "manifest.json"));

  spit(work_ / "script.json", R"({"session_id": "x", "seed": 1, "preset": "easy", "num_speakers": 2,
                                  "schedule": {"turns": -4}})");
  const auto r = exec("synth -s " + q(work_ / "script.json") + " -o " + q(work_ / "s4"));
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("/schedule"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(work_ / "s4"));
}

TEST_F(Cli, ScoreFixture) {
  auto r = exec("score --hyp " + q(fixture("der50_hyp.rttm")) + " --ref " + q(fixture("der50_ref.rttm")) +
               " --frames 50");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  const auto& c = j["channels"][0];
  EXPECT_EQ(c["l_fa"], 2);
  EXPECT_EQ(c["l_miss"], 1);
  EXPECT_EQ(c["l_err"], 1);
  EXPECT_EQ(c["l_total"], 20);
  EXPECT_DOUBLE_EQ(j["average_der_percent"].get<double>(), 20.0);

  spit(work_ / "bad.rttm",
       "SPEAKER f 1 0.000 1.000 <NA> <NA> primary <NA> <NA>\n"
       "SPEAKER f 1 1.000 1.000 <NA> <NA> primary <NA> <NA>\n"
       "SPEAKER f 1 abc 1.000 <NA> <NA> primary <NA> <NA>\n");
  r = exec("score --hyp " + q(work_ / "bad.rttm") + " --ref " + q(fixture("der50_ref.rttm")));
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find(":3"), std::string::npos) << r.err;
}

TEST_F(Cli, SadCommand) {
  auto r = exec("sad -a " + q(session_ / "ch1.wav") + " -o " + q(work_ / "ch1.lab") + " --scores " +
               q(work_ / "ch1.csv") + " --truth " + q(session_ / "sad_ch1.lab"));
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(work_ / "ch1.lab");
  const auto labels = parse_labels(in, "ch1.lab");
  EXPECT_FALSE(labels.empty());
  EXPECT_TRUE(fs::exists(work_ / "ch1.csv"));
  EXPECT_EQ(exec("sad -a " + q(work_ / "missing.wav")).code, 3);
}
