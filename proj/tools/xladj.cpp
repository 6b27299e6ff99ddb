#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xladj/kernels.hpp"
#include "xladj/pipeline.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = "run";
  std::vector<uint64_t> seeds;  // overrides the config when non-empty
  int jobs = 1;
  std::string kernels;
};

xladj::RunConfig load_config(const GlobalArgs& args) {
  xladj::RunConfig cfg = args.config_path.empty()
                             ? xladj::RunConfig{}
                             : xladj::RunConfig::from_json_file(args.config_path);
  if (!args.seeds.empty()) cfg.seeds = args.seeds;
  return cfg;
}

void select_kernels(const std::string& name) {
  if (name.empty()) return;
  if (name == "scalar") {
    xladj::kernels::set_backend(xladj::kernels::Backend::Scalar);
  } else if (name == "avx2") {
    xladj::kernels::set_backend(xladj::kernels::Backend::Avx2);
  } else {
    throw std::runtime_error("unknown kernel backend: " + name);
  }
}

// Runs one pipeline stage for every configured seed.
template <class F>
void per_seed(const xladj::RunConfig& cfg, const std::string& out, F&& fn) {
  for (uint64_t seed : cfg.seeds) fn(cfg, out, seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-lingual encoder adjustment laboratory"};
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "JSON run configuration");
  app.add_option("--out", args.out_dir, "run directory")->capture_default_str();
  app.add_option("--seeds", args.seeds, "override the config seed list");
  app.add_option("--jobs", args.jobs, "parallel seed jobs")->capture_default_str();
  app.add_option("--kernels", args.kernels, "force kernel backend (scalar|avx2)");

  auto* c_generate = app.add_subcommand("generate", "build or ingest corpora and vocabulary");
  auto* c_pretrain = app.add_subcommand("pretrain", "masked-token pretraining per seed");
  auto* c_align = app.add_subcommand("align", "sample, train the aligner, symmetrize");
  auto* c_adjust = app.add_subcommand("adjust", "cross-lingual adjustment per seed");
  auto* c_finetune = app.add_subcommand("finetune", "task fine-tuning (plain and continual)");
  auto* c_evaluate = app.add_subcommand("evaluate", "classification and tagging evaluation");
  auto* c_analyze = app.add_subcommand("analyze", "L2-distance histogram suite");
  auto* c_xsr = app.add_subcommand("xsr", "cross-lingual sentence retrieval");
  auto* c_stats = app.add_subcommand("stats", "cross-seed aggregation and significance");
  auto* c_all = app.add_subcommand("all", "run the full pipeline");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    select_kernels(args.kernels);
    const xladj::RunConfig cfg = load_config(args);
    const std::string& out = args.out_dir;

    if (c_generate->parsed()) {
      xladj::stage_generate(cfg, out);
    } else if (c_pretrain->parsed()) {
      per_seed(cfg, out, xladj::stage_pretrain);
    } else if (c_align->parsed()) {
      per_seed(cfg, out, xladj::stage_align);
    } else if (c_adjust->parsed()) {
      per_seed(cfg, out, xladj::stage_adjust);
    } else if (c_finetune->parsed()) {
      per_seed(cfg, out, xladj::stage_finetune);
    } else if (c_evaluate->parsed()) {
      per_seed(cfg, out, xladj::stage_evaluate);
    } else if (c_analyze->parsed()) {
      per_seed(cfg, out, xladj::stage_analyze);
    } else if (c_xsr->parsed()) {
      per_seed(cfg, out, xladj::stage_xsr);
    } else if (c_stats->parsed()) {
      xladj::stage_stats(cfg, out);
    } else if (c_all->parsed()) {
      xladj::run_pipeline(cfg, out, args.jobs);
    }

    if (!c_all->parsed()) {
      xladj::Manifest manifest(out);
      manifest.refresh_and_save();
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
