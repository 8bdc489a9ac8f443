#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fer/cli.hpp"
#include "support/synthetic.hpp"

using namespace fer;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "fer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "fer_cli_tests";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream out(csv());
    write_fer_csv(oracle::synthetic_fer(4, 2, 3, 21), out);
    out.close();
    std::ofstream(dir_ / "cfg.json") << R"({"batch_size": 8, "max_epochs": 2, "seed": 5})";

    const Outcome r = run({"train", "--model", "baseline", "--data", csv(), "--config", cfg(), "--out", (dir_ / "run").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string csv() { return (dir_ / "fer.csv").string(); }
  static std::string cfg() { return (dir_ / "cfg.json").string(); }
  static std::string ckpt() { return (dir_ / "run" / "best.ckpt").string(); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, InspectReportsSplitsAndClasses) {
  const Outcome r = run({"data", "inspect", csv()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("examples 63"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("train 28  val 14  test 21"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("angry 9"), std::string::npos) << r.out;
  EXPECT_NE(r.err.find("warning: not canonical"), std::string::npos);

  const Outcome j = run({"data", "inspect", csv(), "--json"});
  const auto doc = nlohmann::json::parse(j.out);
  EXPECT_EQ(doc["examples"], 63);
  EXPECT_EQ(doc["splits"]["val"], 14);
  EXPECT_EQ(doc["class_counts"]["neutral"], 9);
  EXPECT_EQ(doc["canonical"], false);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {}, {"frobnicate"}, {"train"}, {"data"}, {"train", "--model", "resnet", "--data", "x", "--out", "y"}}) {
    const Outcome r = run(args);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("error: usage:"), std::string::npos) << r.err;
  }
}

TEST_F(Cli, DomainErrorsExitOneWithOneLine) {
  auto check = [](const Outcome& r, const std::string& kind) {
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error: " + kind + ": ", 0), 0u) << r.err;
    EXPECT_EQ(count_lines(r.err), 1u) << r.err;
  };
  check(run({"data", "inspect", path("missing.csv")}), "io");

  std::ofstream(path("bad.csv")) << "emotion,pixels,Usage\n1,1 2 3,Training\n";
  check(run({"data", "inspect", path("bad.csv")}), "parse");

  std::ofstream(path("typo.json")) << R"({"learning_rate": 0.1})";
  check(run({"train", "--data", csv(), "--config", path("typo.json"), "--out", path("typo")}), "config");

  std::ofstream(path("junk.ckpt")) << "not a checkpoint";
  check(run({"evaluate", "--checkpoint", path("junk.ckpt"), "--data", csv()}), "checkpoint-magic");

  check(run({"evaluate", "--checkpoint", ckpt(), "--data", csv(), "--split", "dev"}), "config");
}

TEST_F(Cli, TrainWritesArtifactsDeterministically) {
  EXPECT_TRUE(fs::exists(dir_ / "run" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "best.ckpt"));
  const std::string history = slurp(dir_ / "run" / "history.csv");
  EXPECT_EQ(count_lines(history), 3u);
  EXPECT_EQ(history.rfind("epoch,train_loss,train_acc,val_loss,val_acc,lr\n1,", 0), 0u);

  const Outcome again = run({"train", "--model", "baseline", "--data", csv(), "--config", cfg(), "--out", path("run2")});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(dir_ / "run2" / "history.csv"), history);
  EXPECT_EQ(slurp(dir_ / "run2" / "last.ckpt"), slurp(dir_ / "run" / "last.ckpt"));

  const Outcome other = run({"train", "--model", "baseline", "--data", csv(), "--config", cfg(), "--seed", "6", "--out", path("run3")});
  ASSERT_EQ(other.code, 0) << other.err;
  EXPECT_NE(slurp(dir_ / "run3" / "history.csv"), history);
}

TEST_F(Cli, ResumeContinuesTheRun) {
  const Outcome first = run({"train", "--model", "baseline", "--data", csv(), "--config", cfg(), "--max-epochs", "1", "--out", path("half")});
  ASSERT_EQ(first.code, 0) << first.err;
  const Outcome second = run({"train", "--data", csv(), "--resume", path("half/last.ckpt"), "--max-epochs", "2", "--out", path("half")});
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_EQ(slurp(dir_ / "half" / "history.csv"), slurp(dir_ / "run" / "history.csv"));
}

TEST_F(Cli, EvaluateMatchesLibrary) {
  const Outcome r = run({"evaluate", "--checkpoint", ckpt(), "--data", csv(), "--split", "test", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto ck = load_checkpoint<float>(ckpt());
  const Dataset test = select_split(parse_fer_csv(fs::path(csv())), Usage::private_test);
  const Metrics lib = evaluate(ck.model, test, 7);
  EXPECT_EQ(nlohmann::json::parse(r.out), metrics_json(lib));

  const Outcome table = run({"evaluate", "--checkpoint", ckpt(), "--data", csv()});
  EXPECT_NE(table.out.find("accuracy"), std::string::npos);
}

TEST_F(Cli, ExportProbsIsDeterministic) {
  ASSERT_EQ(run({"export-probs", "--checkpoint", ckpt(), "--data", csv(), "--out", path("a.csv")}).code, 0);
  ASSERT_EQ(run({"export-probs", "--checkpoint", ckpt(), "--data", csv(), "--batch-size", "5", "--out", path("b.csv")}).code, 0);
  const std::string a = slurp(path("a.csv"));
  EXPECT_EQ(count_lines(a), 22u);
  const auto m = read_prob_csv(fs::path(path("a.csv")));
  EXPECT_NO_THROW(m.validate(1e-5));
  EXPECT_EQ(m.ids.front(), "PrivateTest:42");

  ASSERT_EQ(run({"export-probs", "--checkpoint", ckpt(), "--data", csv(), "--out", path("a2.csv")}).code, 0);
  EXPECT_EQ(slurp(path("a2.csv")), a);
}

TEST_F(Cli, EnsembleMatchesLibrary) {
  ASSERT_EQ(run({"export-probs", "--checkpoint", ckpt(), "--data", csv(), "--out", path("m1.csv")}).code, 0);
  ASSERT_EQ(run({"export-probs", "--checkpoint", path("run/last.ckpt"), "--data", csv(), "--out", path("m2.csv")}).code, 0);
  const Outcome r = run({"ensemble", "--probs", path("m1.csv"), "--probs", path("m2.csv"), "--weight", "1", "--weight", "3",
                     "--data", csv(), "--labels", "test", "--json", "--out", path("voted.csv")});
  ASSERT_EQ(r.code, 0) << r.err;

  const ProbMatrix a = read_prob_csv(fs::path(path("m1.csv"))), b = read_prob_csv(fs::path(path("m2.csv")));
  const Dataset test = select_split(parse_fer_csv(fs::path(csv())), Usage::private_test);
  EXPECT_EQ(nlohmann::json::parse(r.out), metrics_json(ensemble_evaluate({{a, 1.0}, {b, 3.0}}, test)));
  const ProbMatrix voted = read_prob_csv(fs::path(path("voted.csv")));
  EXPECT_EQ(voted.ids, a.ids);

  // A checkpoint member scores like its exported probabilities.
  const Outcome direct = run({"ensemble", "--probs", ckpt(), "--data", csv(), "--json"});
  const Outcome via_csv = run({"ensemble", "--probs", path("m1.csv"), "--data", csv(), "--json"});
  ASSERT_EQ(direct.code, 0) << direct.err;
  EXPECT_EQ(direct.out, via_csv.out);

  const Outcome mismatch = run({"ensemble", "--probs", path("m1.csv"), "--data", csv(), "--labels", "val"});
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_EQ(mismatch.err.rfind("error: alignment: ", 0), 0u) << mismatch.err;

  const Outcome bad_weights = run({"ensemble", "--probs", path("m1.csv"), "--weight", "1", "--weight", "2", "--data", csv()});
  EXPECT_EQ(bad_weights.code, 1);
}

TEST_F(Cli, ExportPreprocessed) {
  const Outcome r = run({"export-preprocessed", "--data", csv(), "--split", "val", "--out", path("val.fert")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto records = read_preprocessed(path("val.fert"));
  ASSERT_EQ(records.size(), 14u);
  for (const auto& rec : records) {
    EXPECT_EQ(rec.image.shape(), (Extents{3, 197, 197}));
    EXPECT_EQ(rec.usage, Usage::public_test);
  }
}
