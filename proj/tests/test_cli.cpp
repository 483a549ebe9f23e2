#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gce/cli.hpp"
#include "gce/graph.hpp"
#include "gce/training.hpp"
#include "support.hpp"

using namespace gce;
using namespace gce::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = main_entry(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gce_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

const std::string kCorpus = gce::test::data_path("toy_corpus.smi");

// Small pretraining run shared by the commands that need a checkpoint.
const fs::path& pretrained() {
  static const fs::path ckpt = [] {
    const fs::path dir = scratch("pre");
    const auto r = invoke({"pretrain", "--data", kCorpus, "--out", dir.string(), "--set", "epochs=3", "--set",
                           "layers=2", "--set", "hidden=8"});
    EXPECT_EQ(r.code, 0) << r.err;
    return dir / "checkpoint.gce";
  }();
  return ckpt;
}

}  // namespace

// ---- parse_args ----------------------------------------------------------------

TEST(CliParse, PretrainWithOverride) {
  const RunConfig rc = parse_args({"pretrain", "--data", kCorpus, "--out", "run1", "--set", "epochs=100"});
  EXPECT_EQ(rc.command, Command::kPretrain);
  EXPECT_EQ(rc.inputs.at("data"), kCorpus);
  EXPECT_EQ(rc.out_dir, "run1");
  EXPECT_EQ(rc.settings.at("epochs"), "100");
}

TEST(CliParse, TypedValueErrorNamesKey) {
  try {
    parse_args({"pretrain", "--data", kCorpus, "--out", "x", "--set", "lr=abc"});
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("'lr'"), std::string::npos) << e.what();
  }
  const auto r = invoke({"pretrain", "--data", kCorpus, "--out", "x", "--set", "lr=abc"});
  EXPECT_EQ(r.code, 2);
}

TEST(CliParse, UsageErrors) {
  const auto none = invoke({});
  EXPECT_EQ(none.code, 2);
  EXPECT_NE(none.err.find("no command"), std::string::npos);
  EXPECT_NE(none.err.find("pretrain"), std::string::npos);  // usage text lists commands

  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"pretrain", "--data", kCorpus, "--out", "x", "--bogus"}).code, 2);
  EXPECT_EQ(invoke({"pretrain", "--data", kCorpus, "--out", "x", "--set", "shots=2"}).code, 2);  // wrong command
  EXPECT_EQ(invoke({"pretrain", "--data", kCorpus, "--out", "x", "--set", "nokey"}).code, 2);
  EXPECT_EQ(invoke({"pretrain", "--out", "x"}).code, 2);                        // missing --data
  EXPECT_EQ(invoke({"pretrain", "--data", "/no/such/file.smi", "--out", "x"}).code, 2);
  EXPECT_EQ(invoke({"pretrain", "--data", kCorpus}).code, 2);                   // missing --out
  EXPECT_THROW(parse_args({"generate", "--model", kCorpus, "--seeds", kCorpus, "--out", "x", "--set", "preset=big"}),
               UsageError);

  const auto help = invoke({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("reconstruct"), std::string::npos);
}

TEST(CliParse, ConfigFileLayering) {
  const fs::path dir = scratch("config");
  write_file(dir / "run.cfg", "# settings\nepochs = 7\nlr=0.5\n\nbatch_size=4  \n");
  const RunConfig rc = parse_args({"pretrain", "--data", kCorpus, "--out", "x", "--config", (dir / "run.cfg").string(),
                                   "--set", "lr=0.25", "--seed", "11"});
  EXPECT_EQ(rc.settings.at("epochs"), "7");
  EXPECT_EQ(rc.settings.at("lr"), "0.25");
  EXPECT_EQ(rc.settings.at("batch_size"), "4");
  EXPECT_EQ(rc.settings.at("seed"), "11");

  write_file(dir / "bad.cfg", "epochs=3\nwidth=9\n");
  try {
    read_config_file((dir / "bad.cfg").string(), Command::kPretrain);
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad.cfg"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("width"), std::string::npos) << msg;
  }
  write_file(dir / "malformed.cfg", "epochs 3\n");
  EXPECT_THROW(read_config_file((dir / "malformed.cfg").string(), Command::kPretrain), UsageError);
}

TEST(CliParse, AllowedKeysPerCommand) {
  const auto keys = allowed_keys(Command::kGenerate);
  for (const char* k : {"shots", "mask_rate", "pseudo_edges", "seed", "num_samples", "sanitize", "threads"}) {
    EXPECT_NE(std::find(keys.begin(), keys.end(), k), keys.end()) << k;
  }
  EXPECT_EQ(std::find(keys.begin(), keys.end(), "lr"), keys.end());
  EXPECT_TRUE(allowed_keys(Command::kInspect).empty());
}

// ---- run ---------------------------------------------------------------------------

TEST(CliRun, PretrainWritesArtifactsAndManifest) {
  const fs::path dir = pretrained().parent_path();
  for (const char* f : {"checkpoint.gce", "training.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(j["format"], "gce-manifest");
  EXPECT_EQ(j["command"], "pretrain");
  EXPECT_EQ(j["settings"]["epochs"], "3");
  EXPECT_EQ(j["settings"]["layers"], "2");
  EXPECT_EQ(j["settings"]["lr"], "0.01");
  EXPECT_EQ(j["settings"]["mask_rate"], "0.1");
  EXPECT_EQ(j["inputs"]["data"]["path"], kCorpus);
  EXPECT_TRUE(j["inputs"]["data"].contains("crc32"));
  EXPECT_EQ(j["formats"]["checkpoint"], kCheckpointVersion);
  const Checkpoint ckpt = load_checkpoint(pretrained().string());
  EXPECT_EQ(ckpt.epoch, 3u);
  EXPECT_EQ(ckpt.model.config().num_layers, 2u);
}

TEST(CliRun, IdenticalManifestsGiveIdenticalArtifacts) {
  const fs::path a = pretrained().parent_path();
  const fs::path b = scratch("pre_again");
  const auto r = invoke({"pretrain", "--manifest", (a / "manifest.json").string(), "--out", b.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"checkpoint.gce", "training.csv", "manifest.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }

  const fs::path g1 = scratch("gen1"), g2 = scratch("gen2");
  const std::vector<std::string> gen = {"generate", "--model", pretrained().string(), "--seeds", kCorpus,
                                        "--training", kCorpus, "--set", "num_samples=40", "--set", "shots=2",
                                        "--out"};
  auto args = gen;
  args.push_back(g1.string());
  ASSERT_EQ(invoke(args).code, 0);
  const auto again = invoke({"generate", "--manifest", (g1 / "manifest.json").string(), "--out", g2.string()});
  ASSERT_EQ(again.code, 0) << again.err;
  for (const char* f : {"generated.smi", "provenance.json", "metrics.json", "metrics.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(g1 / f)) << f;
    EXPECT_EQ(slurp(g1 / f), slurp(g2 / f)) << f;
  }
  EXPECT_EQ(gce::read_smiles_lines((g1 / "generated.smi").string()).size(), 40u);
}

TEST(CliRun, ManifestDetectsChangedInput) {
  const fs::path dir = scratch("changed");
  fs::copy_file(kCorpus, dir / "data.smi");
  ASSERT_EQ(invoke({"pretrain", "--data", (dir / "data.smi").string(), "--out", (dir / "a").string(), "--set",
                    "epochs=1", "--set", "layers=2", "--set", "hidden=4"})
                .code,
            0);
  std::ofstream(dir / "data.smi", std::ios::app) << "CCCC\n";
  const auto r = invoke({"pretrain", "--manifest", (dir / "a" / "manifest.json").string(), "--out", (dir / "b").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("crc32"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "b" / "checkpoint.gce"));
}

TEST(CliRun, Reconstruct) {
  const auto r = invoke({"reconstruct", "--model", pretrained().string(), "--smiles", "CCO", "--mask-rate", "0.1",
                         "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("input:         CCO"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("masked atoms:"), std::string::npos);
  EXPECT_NE(r.out.find("reconstructed: "), std::string::npos);
  // 0.1 * 3 atoms rounds to 0; at least one atom is always masked.
  const auto line = r.out.substr(r.out.find("masked atoms:"));
  EXPECT_EQ(std::count(line.begin(), line.begin() + static_cast<long>(line.find('\n')), ':'), 2);

  const auto bad = invoke({"reconstruct", "--model", pretrained().string(), "--smiles", "C(C"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("error:"), std::string::npos);
}

TEST(CliRun, EvaluateIdentityAndUnparsable) {
  const fs::path dir = scratch("evaluate");
  const auto r = invoke({"evaluate", "--generated", kCorpus, "--reference", kCorpus, "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_GE(j["kl_score"].get<double>(), 0.999);
  EXPECT_DOUBLE_EQ(j["novelty"].get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(j["validity"].get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(dir / "metrics.json"));
  EXPECT_TRUE(fs::exists(dir / "metrics.csv"));

  write_file(dir / "g.smi", "CCO\nC(C\nCCN\n");
  const auto u = invoke({"evaluate", "--generated", (dir / "g.smi").string(), "--reference", kCorpus});
  ASSERT_EQ(u.code, 0) << u.err;
  EXPECT_NE(u.err.find("1 unparsable"), std::string::npos);
  const auto ju = nlohmann::json::parse(u.out);
  EXPECT_EQ(ju["generated"], 3);
  EXPECT_EQ(ju["valid"], 2);
}

TEST(CliRun, FinetuneAndInspect) {
  const fs::path dir = scratch("finetune");
  Dataset ds{FeatureCodec::molecular(), synth_dataset(SynthKind::kCyclesVsPaths, 12, 4, 8, 1)};
  save_dataset((dir / "cycles.jsonl").string(), ds);
  const auto r = invoke({"finetune", "--model", pretrained().string(), "--data", (dir / "cycles.jsonl").string(),
                         "--out", (dir / "run").string(), "--set", "epochs=2", "--set", "batch_size=4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("fine-tuned 2 epochs"), std::string::npos) << r.out;
  const auto t = nlohmann::json::parse(slurp(dir / "run" / "transfer.json"));
  EXPECT_FALSE(t["loaded"].empty());
  EXPECT_FALSE(t["initialized"].empty());
  const Checkpoint ckpt = load_checkpoint((dir / "run" / "checkpoint.gce").string());
  EXPECT_TRUE(ckpt.model.has_head());

  const auto i = invoke({"inspect", "--model", (dir / "run" / "checkpoint.gce").string()});
  ASSERT_EQ(i.code, 0) << i.err;
  EXPECT_NE(i.out.find("\"num_classes\": 2"), std::string::npos) << i.out;
  EXPECT_NE(i.out.find("head."), std::string::npos);
  EXPECT_NE(i.out.find("total parameters:"), std::string::npos);

  // A pretraining checkpoint cannot resume fine-tuning.
  const auto bad = invoke({"finetune", "--resume", pretrained().string(), "--data", (dir / "cycles.jsonl").string(),
                           "--out", (dir / "bad").string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_FALSE(fs::exists(dir / "bad" / "checkpoint.gce"));
}

TEST(CliRun, InputsAreNotModified) {
  const std::string before = slurp(pretrained());
  ASSERT_EQ(invoke({"inspect", "--model", pretrained().string()}).code, 0);
  ASSERT_EQ(invoke({"reconstruct", "--model", pretrained().string(), "--smiles", "CCO"}).code, 0);
  EXPECT_EQ(slurp(pretrained()), before);
  // Refuses to write over an input.
  const auto r = invoke({"pretrain", "--resume", pretrained().string(), "--data", kCorpus, "--out",
                         pretrained().parent_path().string(), "--set", "epochs=4"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(slurp(pretrained()), before);
}
