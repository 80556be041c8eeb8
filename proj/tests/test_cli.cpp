#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "birdie/config.hpp"
#include "birdie/sim_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Proc {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("birdie_cli_") + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  Proc run(const std::string& args, const std::string& env = "") const {
    const fs::path o = dir / "stdout.txt", e = dir / "stderr.txt";
    const std::string cmd = "env -u BIRDIE_SEED " + env + " " + BIRDIE_CLI_PATH + " " + args + " > " + o.string() +
                            " 2> " + e.string();
    const int status = std::system(cmd.c_str());
    Proc r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
  }

  std::string p(const std::string& name) const { return (dir / name).string(); }

  // Small and fast: a couple of layers, short batches, few eval rows.
  std::string tiny_config(const std::string& out, const std::string& extra = "") const {
    return "seed = 5\n"
           "model.layers = 2\nmodel.d_model = 16\nmodel.state_size = 16\n"
           "train.steps = 100\ntrain.batch_tokens = 1024\ntrain.lr = 0.01\ntrain.min_lr = 0.001\n"
           "train.checkpoint_every = 0\n"
           "curriculum.eval_sequences = 1\ncurriculum.reward_hidden = 16\ncurriculum.reward_layers = 1\n"
           "curriculum.refit_steps = 5\ncurriculum.candidates = 64\n"
           "out_dir = " + out + "\n" + extra;
  }
};

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows.push_back(json::parse(line));
  return rows;
}

std::string field(const std::string& dump, const std::string& key) {
  const auto at = dump.find("\n" + key + ": ");
  if (at == std::string::npos) return "<missing>";
  const auto start = at + key.size() + 3;
  return dump.substr(start, dump.find('\n', start) - start);
}

}  // namespace

TEST_F(Cli, TransformReproducesFixtures) {
  std::ifstream in(std::string(BIRDIE_FIXTURE_DIR) + "/objectives/table1.json");
  const json fx = json::parse(in);
  spit(p("sentence.txt"), fx["sentence"].get<std::string>() + "\n");
  for (const auto& c : fx["cases"]) {
    const Proc r = run("transform --objective " + c["objective"].get<std::string>() + " --input " + p("sentence.txt") +
                      " --out " + p("o") + " --tokens words --seed " + std::to_string(c["seed"].get<int>()));
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string dump = "\n" + slurp(p("o.txt"));
    EXPECT_EQ(field(dump, "In"), c["in"].get<std::string>()) << c["row"];
    EXPECT_EQ(field(dump, "Tgt"), c["tgt"].get<std::string>()) << c["row"];
  }
}

TEST_F(Cli, TransformEmptyInputIsAnError) {
  spit(p("empty.txt"), "");
  const Proc r = run("transform -o copying/len8-16 -i " + p("empty.txt") + " --out " + p("o") + " --seed 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no documents"), std::string::npos) << r.err;
}

TEST_F(Cli, TransformSameSeedSameFiles) {
  spit(p("docs.txt"), "the quick brown fox jumps over the lazy dog\nsecond line of text here\n");
  const std::string base = "transform -o infilling/len16-32/mask0.15/span3 -i " + p("docs.txt");
  ASSERT_EQ(run(base + " --out " + p("a") + " --seed 3").code, 0);
  ASSERT_EQ(run(base + " --out " + p("b") + " --seed 3").code, 0);
  ASSERT_EQ(run(base + " --out " + p("c") + " --seed 4").code, 0);
  for (const char* ext : {".ids", ".targets", ".loss", ".reset", ".seg"}) {
    EXPECT_EQ(slurp(p(std::string("a") + ext)), slurp(p(std::string("b") + ext))) << ext;
  }
  EXPECT_NE(slurp(p("a.ids")), slurp(p("c.ids")));
}

TEST_F(Cli, SeedFromEnvironment) {
  spit(p("docs.txt"), "abcdefghijklmnopqrstuvwxyz\n");
  const std::string base = "transform -o deshuffling/len8-16/shuffle0.5 -i " + p("docs.txt");
  ASSERT_EQ(run(base + " --out " + p("flag") + " --seed 8").code, 0);
  ASSERT_EQ(run(base + " --out " + p("env"), "BIRDIE_SEED=8").code, 0);
  ASSERT_EQ(run(base + " --out " + p("both") + " --seed 1", "BIRDIE_SEED=8").code, 0);
  EXPECT_EQ(slurp(p("flag.ids")), slurp(p("env.ids")));
  EXPECT_EQ(slurp(p("flag.ids")), slurp(p("both.ids")));
  EXPECT_EQ(run(base + " --out " + p("none")).code, 1);
  EXPECT_EQ(run(base + " --out " + p("bad"), "BIRDIE_SEED=abc").code, 1);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("transform --bogus").code, 1);
  spit(p("d.txt"), "x\n");
  const Proc r = run("transform -o nonsense/len1-2 -i " + p("d.txt") + " --out " + p("o") + " --seed 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, TrainWritesManifestAndLossDecreases) {
  spit(p("run.cfg"), tiny_config(p("run")));
  const Proc r = run("train -q -c " + p("run.cfg"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json manifest = json::parse(slurp(p("run/manifest.json")));
  for (const char* k : {"config_hash", "seed", "versions", "config"}) EXPECT_TRUE(manifest.contains(k)) << k;
  EXPECT_EQ(manifest["seed"], 5);
  const auto rows = read_jsonl(p("run/metrics.jsonl"));
  ASSERT_EQ(rows.size(), 100u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += rows[static_cast<std::size_t>(i)]["loss"].get<double>();
    tail += rows[rows.size() - 1 - static_cast<std::size_t>(i)]["loss"].get<double>();
  }
  EXPECT_LT(tail, head);
  const auto trace = read_jsonl(p("run/curriculum.jsonl"));
  ASSERT_FALSE(trace.empty());
  for (const auto& t : trace)
    for (const char* k : {"step", "action", "losses", "rewards", "total_reward"}) EXPECT_TRUE(t.contains(k));
  EXPECT_TRUE(fs::exists(p("run/checkpoint.bin")));
}

TEST_F(Cli, ResumeReproducesMetrics) {
  spit(p("a.cfg"), tiny_config(p("a"), "train.steps = 60\n"));
  spit(p("b.cfg"), tiny_config(p("b"), "train.steps = 60\n"));
  ASSERT_EQ(run("train -q -c " + p("a.cfg")).code, 0);
  ASSERT_EQ(run("train -q -c " + p("b.cfg") + " --stop-after 30").code, 0);
  const auto partial = read_jsonl(p("b/metrics.jsonl"));
  EXPECT_EQ(partial.size(), 30u);
  const Proc r = run("train -q -c " + p("b.cfg") + " --resume");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(p("a/metrics.jsonl")), slurp(p("b/metrics.jsonl")));
  EXPECT_EQ(slurp(p("a/curriculum.jsonl")), slurp(p("b/curriculum.jsonl")));
}

TEST_F(Cli, NextTokenMixtureHasNoController) {
  spit(p("n.cfg"), tiny_config(p("n"), "mixture = next-token\ntrain.steps = 20\n"));
  const Proc r = run("train -q -c " + p("n.cfg"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(fs::exists(p("n/curriculum.jsonl")));
  EXPECT_EQ(read_jsonl(p("n/metrics.jsonl")).size(), 20u);
}

TEST_F(Cli, ConfigErrors) {
  spit(p("unknown.cfg"), "seed = 1\nmodel.depth = 3\n");
  Proc r = run("train -c " + p("unknown.cfg"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("model.depth"), std::string::npos) << r.err;
  spit(p("noseed.cfg"), "train.steps = 3\n");
  EXPECT_EQ(run("train -c " + p("noseed.cfg")).code, 1);
  spit(p("huge.cfg"), "seed = 1\nmodel.d_model = 4096\nmodel.state_size = 4096\ntrain.batch_tokens = 65536\nmemory_limit_mb = 64\nout_dir = " + p("huge") + "\n");
  r = run("train -c " + p("huge.cfg"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("estimated"), std::string::npos) << r.err;
}

TEST_F(Cli, EvalTasks) {
  spit(p("e.cfg"), tiny_config(p("e"), "train.steps = 10\n"));
  ASSERT_EQ(run("train -q -c " + p("e.cfg")).code, 0);
  const std::string base = "eval -c " + p("e.cfg") + " --checkpoint " + p("e/checkpoint.bin");
  Proc r = run(base + " -t phonebook -n 2 --queries 1,2 --min-entries 2 --max-entries 3 --out " + p("pb.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(p("pb.csv"));
  EXPECT_EQ(csv.rfind("num_queries,accuracy,all_correct_rate\n", 0), 0u) << csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  r = run(base + " -t selective-copy -n 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("config,accuracy\n", 0), 0u) << r.out;

  r = run(base + " -t riddles");
  EXPECT_EQ(r.code, 1);
  for (const char* t : {"phonebook", "selective-copy", "copy", "infilling"}) EXPECT_NE(r.err.find(t), std::string::npos);

  spit(p("other.cfg"), tiny_config(p("e"), "model.d_model = 32\n"));
  r = run("eval -c " + p("other.cfg") + " --checkpoint " + p("e/checkpoint.bin") + " -t copy -n 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("mismatch"), std::string::npos) << r.err;
}

TEST_F(Cli, CurriculumSimTrace) {
  spit(p("sim.cfg"), "seed = 2\nsteps = 1000\ncurriculum.reward_hidden = 16\ncurriculum.reward_layers = 1\n"
                      "curriculum.refit_steps = 5\ncurriculum.candidates = 64\n");
  const Proc r = run("curriculum-sim -c " + p("sim.cfg") + " --out " + p("trace.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_jsonl(p("trace.jsonl"));
  ASSERT_EQ(rows.size(), 5u);  // 10, 50, 250, 500, 1000
  EXPECT_EQ(rows.front()["step"], 10);
  for (const auto& row : rows) {
    EXPECT_EQ(row.size(), 5u);
    double s = 0;
    for (const double a : row["action"]) s += a;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  spit(p("bad.cfg"), "seed = 2\ndominant = 999\n");
  EXPECT_EQ(run("curriculum-sim -c " + p("bad.cfg")).code, 1);
}

TEST_F(Cli, ScanBenchCsv) {
  const Proc r = run("scan-bench -L 64,128 -N 4 --reps 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("L,N,kernel,ns/element\n", 0), 0u) << r.out;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1 + 2 * 5);
}

TEST(ShippedConfigs, Parse) {
  const fs::path dir = fs::path(BIRDIE_FIXTURE_DIR).parent_path() / "configs";
  const birdie::RunConfig b = birdie::load_config((dir / "desk_birdie.cfg").string());
  EXPECT_EQ(b.mixture, birdie::MixtureMode::Birdie);
  EXPECT_EQ(b.model.num_layers, 4u);
  const birdie::RunConfig n = birdie::load_config((dir / "desk_next_token.cfg").string());
  EXPECT_EQ(n.mixture, birdie::MixtureMode::NextToken);
  EXPECT_EQ(n.model.bidir, birdie::BidirPattern::None);
  const birdie::SimRunConfig s = birdie::load_sim_config((dir / "sim.cfg").string());
  EXPECT_EQ(s.steps, 20000u);
}
