#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "xladj/pipeline.hpp"

using namespace xladj;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.seeds = {1};
  cfg.data.data_seed = 5;
  cfg.data.vocab_words = 60;
  cfg.data.pool_sentences = 90;
  cfg.data.len_min = 4;
  cfg.data.len_max = 8;
  cfg.data.task_train = 48;
  cfg.data.task_test = 24;
  cfg.data.tag_train = 30;
  cfg.data.tag_test = 15;
  cfg.data.xsr_sentences = 15;
  cfg.bpe_vocab_size = 170;
  cfg.encoder.layers = 2;
  cfg.encoder.model_dim = 32;
  cfg.encoder.heads = 2;
  cfg.encoder.ffn_dim = 48;
  cfg.encoder.max_positions = 48;
  cfg.pretrain.steps = 25;
  cfg.pretrain.batch = 8;
  cfg.align.iterations = 3;
  cfg.align.sample = 60;
  cfg.align.max_pairs = 400;
  cfg.adjust.lr = 1e-3f;
  cfg.adjust.epochs = 1;
  cfg.finetune.lr = 1e-3f;
  cfg.finetune.epochs = 1;
  cfg.analysis.n_related = 120;
  cfg.analysis.n_unrelated = 120;
  cfg.analysis.bins = 12;
  return cfg;
}

std::string read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config json round-trips") {
  auto cfg = tiny_config();
  auto text = cfg.to_json_text();
  auto back = RunConfig::from_json_text(text);
  CHECK(back.to_json_text() == text);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.encoder.model_dim == 32);

  CHECK_THROWS_AS(RunConfig::from_json_text("{\"seeds\": []}"), std::runtime_error);
  CHECK_THROWS_AS(RunConfig::from_json_text("{\"mode\": \"bogus\"}"), std::runtime_error);
}

TEST_CASE("full tiny pipeline run produces the expected artifacts") {
  const auto dir = (fs::temp_directory_path() / "xladj_pipe_full").string();
  fs::remove_all(dir);
  auto cfg = tiny_config();
  run_pipeline(cfg, dir, 1);

  for (const char* f :
       {"config.json", "summary.json", "MANIFEST.json", "corpus/parallel.txt",
        "corpus/gold.pharaoh", "corpus/vocab.txt", "corpus/cls_train.tsv",
        "corpus/cls_test_tgt.tsv", "corpus/cls_test_mixed.tsv", "corpus/tag_train.tsv",
        "corpus/xsr_queries.txt", "seed_1/model_original.ckpt", "seed_1/model_adjusted.ckpt",
        "seed_1/align_sym.pharaoh", "seed_1/cls_adjusted_continual.ckpt",
        "seed_1/evaluation.json", "seed_1/histograms.svg", "seed_1/xsr.json"}) {
    CHECK_MESSAGE(fs::exists(dir + "/" + f), f);
  }

  // every artifact is hashed in the manifest; stages are marked done
  auto manifest = json::parse(read_all(dir + "/MANIFEST.json"));
  size_t file_count = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() != "MANIFEST.json") ++file_count;
  }
  CHECK(manifest.at("files").size() == file_count);
  for (auto& [stage, status] : manifest.at("stages").items()) {
    CHECK_MESSAGE(status.get<std::string>() == "done", stage);
  }

  auto summary = json::parse(read_all(dir + "/summary.json"));
  CHECK(summary.at("classification").at("target").contains("adjusted_continual"));
  CHECK(summary.at("analysis").at("overlap").contains("original_finetuned"));
  CHECK(summary.at("xsr").contains("adjusted"));
}

TEST_CASE("reruns are byte-identical") {
  const auto dir_a = (fs::temp_directory_path() / "xladj_pipe_a").string();
  const auto dir_b = (fs::temp_directory_path() / "xladj_pipe_b").string();
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  auto cfg = tiny_config();
  run_pipeline(cfg, dir_a, 1);
  run_pipeline(cfg, dir_b, 1);

  CHECK(read_all(dir_a + "/summary.json") == read_all(dir_b + "/summary.json"));
  auto ma = json::parse(read_all(dir_a + "/MANIFEST.json"));
  auto mb = json::parse(read_all(dir_b + "/MANIFEST.json"));
  CHECK(ma.at("files") == mb.at("files"));
}

TEST_CASE("an align-only rerun touches only alignment outputs") {
  const auto dir = (fs::temp_directory_path() / "xladj_pipe_align").string();
  fs::remove_all(dir);
  auto cfg = tiny_config();

  // corpus first
  RunConfig gen = cfg;
  gen.stages = {};
  gen.stages.generate = true;
  gen.stages.pretrain = gen.stages.align = gen.stages.adjust = gen.stages.finetune = false;
  gen.stages.evaluate = gen.stages.analyze = gen.stages.xsr = gen.stages.stats = false;
  run_pipeline(gen, dir, 1);

  RunConfig align_only = cfg;
  align_only.stages = gen.stages;
  align_only.stages.generate = false;
  align_only.stages.align = true;
  run_pipeline(align_only, dir, 1);

  CHECK(fs::exists(dir + "/seed_1/align_sym.pharaoh"));
  CHECK(fs::exists(dir + "/seed_1/align_metrics.json"));
  CHECK(fs::exists(dir + "/MANIFEST.json"));
  CHECK(!fs::exists(dir + "/seed_1/model_original.ckpt"));
  CHECK(!fs::exists(dir + "/summary.json"));
}

TEST_CASE("stage failures carry the stage and seed tag") {
  const auto dir = (fs::temp_directory_path() / "xladj_pipe_fail").string();
  fs::remove_all(dir);
  auto cfg = tiny_config();
  cfg.stages.generate = false;  // no corpus: pretrain must fail
  CHECK_THROWS_WITH_AS(run_pipeline(cfg, dir, 1), doctest::Contains("pretrain (seed 1)"),
                       std::runtime_error);
}
