#include "xladj/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "xladj/analysis.hpp"
#include "xladj/retrieval.hpp"
#include "xladj/rng.hpp"
#include "xladj/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xladj {

namespace {

std::string corpus_dir(const std::string& run_dir) { return run_dir + "/corpus"; }

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

json read_json(const std::string& path) { return json::parse(read_file(path)); }

void write_json(const std::string& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::vector<std::vector<std::string>> load_sentence_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto words = split_whitespace(line);
    if (!words.empty()) out.push_back(std::move(words));
  }
  return out;
}

void save_sentence_lines(const std::vector<std::vector<std::string>>& sents,
                         const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& s : sents) {
    for (size_t i = 0; i < s.size(); ++i) f << (i ? " " : "") << s[i];
    f << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<std::string> load_name_lines(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_ft_trace(const FinetuneResult& r, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "step,target,align,combined\n";
  for (size_t i = 0; i < r.target_trace.size(); ++i) {
    f << i << "," << r.target_trace[i] << "," << r.align_trace[i] << "," << r.combined_trace[i]
      << "\n";
  }
}

int label_count(const std::vector<PairExample>& data) {
  int n = 0;
  for (const auto& e : data) n = std::max(n, e.label + 1);
  return std::max(n, 2);
}

EncoderConfig resolved_encoder_config(const RunConfig& cfg, const SubwordVocab& vocab) {
  EncoderConfig c = cfg.encoder;
  c.vocab_size = vocab.size();
  c.validate();
  return c;
}

// Names used in per-seed artifact files for the three fine-tuned systems.
const char* const kFtScenarios[3] = {"original", "adjusted", "adjusted_continual"};

struct SeedPaths {
  std::string dir;
  std::string model_original, model_adjusted;
  std::string sample, align_fwd, align_rev, align_sym;

  explicit SeedPaths(const std::string& run_dir, uint64_t seed) : dir(seed_dir(run_dir, seed)) {
    model_original = dir + "/model_original.ckpt";
    model_adjusted = dir + "/model_adjusted.ckpt";
    sample = dir + "/sample.txt";
    align_fwd = dir + "/align_forward.pharaoh";
    align_rev = dir + "/align_reverse.pharaoh";
    align_sym = dir + "/align_sym.pharaoh";
  }
  std::string cls_ckpt(const std::string& scenario) const {
    return dir + "/cls_" + scenario + ".ckpt";
  }
  std::string cls_head(const std::string& scenario) const {
    return dir + "/cls_" + scenario + ".head";
  }
  std::string tag_ckpt(const std::string& scenario) const {
    return dir + "/tag_" + scenario + ".ckpt";
  }
  std::string tag_head(const std::string& scenario) const {
    return dir + "/tag_" + scenario + ".head";
  }
};

WordPairSet rebuild_word_pairs(const RunConfig& cfg, const SubwordVocab& vocab,
                               const SeedPaths& sp, uint64_t seed) {
  auto sample = load_parallel(sp.sample);
  auto links = load_pharaoh(sp.align_sym);
  return extract_word_pairs(sample, vocab, links, cfg.align.max_pairs,
                            derive_seed(seed, "extract"));
}

}  // namespace

std::string seed_dir(const std::string& run_dir, uint64_t seed) {
  return run_dir + "/seed_" + std::to_string(seed);
}

// ---- RunConfig JSON ----

namespace {

ReorderRule reorder_from_string(const std::string& s) {
  if (s == "none") return ReorderRule::None;
  if (s == "adjacent_swap") return ReorderRule::AdjacentSwap;
  throw std::runtime_error("unknown reorder rule: " + s);
}
const char* reorder_name(ReorderRule r) {
  return r == ReorderRule::None ? "none" : "adjacent_swap";
}

SymHeuristic heuristic_from_string(const std::string& s) {
  if (s == "intersection") return SymHeuristic::Intersection;
  if (s == "grow-diag-final-and") return SymHeuristic::GrowDiagFinalAnd;
  throw std::runtime_error("unknown symmetrization heuristic: " + s);
}
const char* heuristic_name(SymHeuristic h) {
  return h == SymHeuristic::Intersection ? "intersection" : "grow-diag-final-and";
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  RunConfig c;
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (c.seeds.empty()) throw std::runtime_error("config: seed list must be non-empty");
  c.mode = j.value("mode", c.mode);
  if (c.mode != "cipher" && c.mode != "files") {
    throw std::runtime_error("config: mode must be \"cipher\" or \"files\"");
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    c.data.data_seed = d.value("data_seed", c.data.data_seed);
    c.data.vocab_words = d.value("vocab_words", c.data.vocab_words);
    c.data.pool_sentences = d.value("pool_sentences", c.data.pool_sentences);
    c.data.len_min = d.value("len_min", c.data.len_min);
    c.data.len_max = d.value("len_max", c.data.len_max);
    c.data.reorder = reorder_from_string(d.value("reorder", std::string("none")));
    c.data.label_groups = d.value("label_groups", c.data.label_groups);
    c.data.keywords_per_group = d.value("keywords_per_group", c.data.keywords_per_group);
    c.data.entity_groups = d.value("entity_groups", c.data.entity_groups);
    c.data.entities_per_group = d.value("entities_per_group", c.data.entities_per_group);
    c.data.task_train = d.value("task_train", c.data.task_train);
    c.data.task_test = d.value("task_test", c.data.task_test);
    c.data.tag_train = d.value("tag_train", c.data.tag_train);
    c.data.tag_test = d.value("tag_test", c.data.tag_test);
    c.data.xsr_sentences = d.value("xsr_sentences", c.data.xsr_sentences);
  }
  if (j.contains("files")) {
    const json& d = j.at("files");
    c.parallel_path = d.value("parallel", std::string());
    c.gold_path = d.value("gold", std::string());
    c.cls_train_path = d.value("cls_train", std::string());
    c.cls_test_path = d.value("cls_test", std::string());
    c.cls_test_src_path = d.value("cls_test_src", std::string());
    c.tag_train_path = d.value("tag_train", std::string());
    c.tag_test_path = d.value("tag_test", std::string());
    c.xsr_queries_path = d.value("xsr_queries", std::string());
    c.xsr_corpus_path = d.value("xsr_corpus", std::string());
    if (d.contains("tag_names")) c.tag_names = d.at("tag_names").get<std::vector<std::string>>();
  }

  c.bpe_vocab_size = j.value("bpe_vocab_size", c.bpe_vocab_size);
  if (j.contains("encoder")) {
    const json& d = j.at("encoder");
    c.encoder.layers = d.value("layers", c.encoder.layers);
    c.encoder.model_dim = d.value("model_dim", c.encoder.model_dim);
    c.encoder.heads = d.value("heads", c.encoder.heads);
    c.encoder.ffn_dim = d.value("ffn_dim", c.encoder.ffn_dim);
    c.encoder.max_positions = d.value("max_positions", c.encoder.max_positions);
    c.encoder.dropout = d.value("dropout", c.encoder.dropout);
  }
  if (j.contains("pretrain")) {
    const json& d = j.at("pretrain");
    c.pretrain.steps = d.value("steps", c.pretrain.steps);
    c.pretrain.batch = d.value("batch", c.pretrain.batch);
    c.pretrain.mask_prob = d.value("mask_prob", c.pretrain.mask_prob);
    c.pretrain.lr = d.value("lr", c.pretrain.lr);
  }
  if (j.contains("align")) {
    const json& d = j.at("align");
    c.align.iterations = d.value("iterations", c.align.iterations);
    c.align.sample = d.value("sample", c.align.sample);
    c.align.max_pairs = d.value("max_pairs", c.align.max_pairs);
    c.align.heuristic =
        heuristic_from_string(d.value("heuristic", std::string("grow-diag-final-and")));
  }
  if (j.contains("adjust")) {
    const json& d = j.at("adjust");
    c.adjust.lr = d.value("lr", c.adjust.lr);
    c.adjust.epochs = d.value("epochs", c.adjust.epochs);
    c.adjust.batch_pairs = d.value("batch_pairs", c.adjust.batch_pairs);
    c.adjust.pooling = pooling_from_string(d.value("pooling", std::string("average")));
    c.adjust.layer = d.value("layer", c.adjust.layer);
  }
  if (j.contains("finetune")) {
    const json& d = j.at("finetune");
    c.finetune.lr = d.value("lr", c.finetune.lr);
    c.finetune.epochs = d.value("epochs", c.finetune.epochs);
    c.finetune.main_batch = d.value("main_batch", c.finetune.main_batch);
    c.finetune.replay_batch = d.value("replay_batch", c.finetune.replay_batch);
    c.finetune.alpha = d.value("alpha", c.finetune.alpha);
    c.finetune.replay_pooling =
        pooling_from_string(d.value("replay_pooling", std::string("average")));
    c.finetune.replay_layer = d.value("replay_layer", c.finetune.replay_layer);
  }
  if (j.contains("analysis")) {
    const json& d = j.at("analysis");
    c.analysis.n_related = d.value("n_related", c.analysis.n_related);
    c.analysis.n_unrelated = d.value("n_unrelated", c.analysis.n_unrelated);
    c.analysis.bins = d.value("bins", c.analysis.bins);
    c.analysis.layer = d.value("layer", c.analysis.layer);
  }
  if (j.contains("stages")) {
    const json& d = j.at("stages");
    c.stages.generate = d.value("generate", true);
    c.stages.pretrain = d.value("pretrain", true);
    c.stages.align = d.value("align", true);
    c.stages.adjust = d.value("adjust", true);
    c.stages.finetune = d.value("finetune", true);
    c.stages.evaluate = d.value("evaluate", true);
    c.stages.analyze = d.value("analyze", true);
    c.stages.xsr = d.value("xsr", true);
    c.stages.stats = d.value("stats", true);
  }
  return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  try {
    return from_json_text(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::string RunConfig::to_json_text() const {
  json j;
  j["seeds"] = seeds;
  j["mode"] = mode;
  j["data"] = {{"data_seed", data.data_seed},
               {"vocab_words", data.vocab_words},
               {"pool_sentences", data.pool_sentences},
               {"len_min", data.len_min},
               {"len_max", data.len_max},
               {"reorder", reorder_name(data.reorder)},
               {"label_groups", data.label_groups},
               {"keywords_per_group", data.keywords_per_group},
               {"entity_groups", data.entity_groups},
               {"entities_per_group", data.entities_per_group},
               {"task_train", data.task_train},
               {"task_test", data.task_test},
               {"tag_train", data.tag_train},
               {"tag_test", data.tag_test},
               {"xsr_sentences", data.xsr_sentences}};
  j["files"] = {{"parallel", parallel_path},   {"gold", gold_path},
                {"cls_train", cls_train_path}, {"cls_test", cls_test_path},
                {"cls_test_src", cls_test_src_path}, {"tag_train", tag_train_path},
                {"tag_test", tag_test_path},   {"xsr_queries", xsr_queries_path},
                {"xsr_corpus", xsr_corpus_path}, {"tag_names", tag_names}};
  j["bpe_vocab_size"] = bpe_vocab_size;
  j["encoder"] = {{"layers", encoder.layers},   {"model_dim", encoder.model_dim},
                  {"heads", encoder.heads},     {"ffn_dim", encoder.ffn_dim},
                  {"max_positions", encoder.max_positions}, {"dropout", encoder.dropout}};
  j["pretrain"] = {{"steps", pretrain.steps},
                   {"batch", pretrain.batch},
                   {"mask_prob", pretrain.mask_prob},
                   {"lr", pretrain.lr}};
  j["align"] = {{"iterations", align.iterations},
                {"sample", align.sample},
                {"max_pairs", align.max_pairs},
                {"heuristic", heuristic_name(align.heuristic)}};
  j["adjust"] = {{"lr", adjust.lr},
                 {"epochs", adjust.epochs},
                 {"batch_pairs", adjust.batch_pairs},
                 {"pooling", pooling_name(adjust.pooling)},
                 {"layer", adjust.layer}};
  j["finetune"] = {{"lr", finetune.lr},
                   {"epochs", finetune.epochs},
                   {"main_batch", finetune.main_batch},
                   {"replay_batch", finetune.replay_batch},
                   {"alpha", finetune.alpha},
                   {"replay_pooling", pooling_name(finetune.replay_pooling)},
                   {"replay_layer", finetune.replay_layer}};
  j["analysis"] = {{"n_related", analysis.n_related},
                   {"n_unrelated", analysis.n_unrelated},
                   {"bins", analysis.bins},
                   {"layer", analysis.layer}};
  j["stages"] = {{"generate", stages.generate}, {"pretrain", stages.pretrain},
                 {"align", stages.align},       {"adjust", stages.adjust},
                 {"finetune", stages.finetune}, {"evaluate", stages.evaluate},
                 {"analyze", stages.analyze},   {"xsr", stages.xsr},
                 {"stats", stages.stats}};
  return j.dump(2) + "\n";
}

// ---- Manifest ----

namespace {
std::mutex g_manifest_mutex;
}

Manifest::Manifest(std::string run_dir) : run_dir_(std::move(run_dir)) {
  const std::string path = run_dir_ + "/MANIFEST.json";
  if (fs::exists(path)) {
    json j = read_json(path);
    if (j.contains("stages")) {
      for (auto& [k, v] : j.at("stages").items()) stage_status_[k] = v.get<std::string>();
    }
  }
}

void Manifest::mark(const std::string& stage, const std::string& status) {
  std::lock_guard<std::mutex> lock(g_manifest_mutex);
  stage_status_[stage] = status;
}

void Manifest::refresh_and_save() {
  std::lock_guard<std::mutex> lock(g_manifest_mutex);
  if (!fs::exists(run_dir_)) return;
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir_)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), run_dir_).generic_string();
    if (rel == "MANIFEST.json") continue;
    const std::string bytes = read_file(entry.path().string());
    std::ostringstream os;
    os << std::hex << fnv1a64(bytes.data(), bytes.size());
    files[rel] = os.str();
  }
  json j;
  j["stages"] = stage_status_;
  j["files"] = files;
  write_json(run_dir_ + "/MANIFEST.json", j);
}

// ---- stages ----

void stage_generate(const RunConfig& cfg, const std::string& run_dir) {
  const std::string cdir = corpus_dir(run_dir);
  fs::create_directories(cdir);

  ParallelCorpus parallel;
  AlignmentLinkSet gold;
  std::vector<PairExample> cls_train, cls_test_tgt, cls_test_src, cls_test_mixed;
  std::vector<TaggedSentence> tag_train, tag_test;
  std::vector<std::vector<std::string>> xsr_queries, xsr_corpus;
  std::vector<std::string> tag_names;

  if (cfg.mode == "cipher") {
    SynthData data = generate_synth_data(cfg.data);
    parallel = data.parallel.corpus;
    gold = data.parallel.gold;
    cls_train = data.cls_train_src;
    cls_test_tgt = data.cls_test_tgt;
    cls_test_src = data.cls_test_src;
    cls_test_mixed = data.cls_test_mixed;
    tag_train = data.tag_train_src;
    tag_test = data.tag_test_tgt;
    xsr_queries = data.xsr_queries_tgt;
    xsr_corpus = data.xsr_corpus_src;
    tag_names = data.tag_names;
  } else {
    if (cfg.parallel_path.empty()) throw std::runtime_error("files mode: parallel path missing");
    parallel = load_parallel(cfg.parallel_path);
    if (!cfg.gold_path.empty()) gold = load_pharaoh(cfg.gold_path);
    tag_names = cfg.tag_names;
    if (!cfg.cls_train_path.empty()) cls_train = load_pair_examples(cfg.cls_train_path);
    if (!cfg.cls_test_path.empty()) cls_test_tgt = load_pair_examples(cfg.cls_test_path);
    if (!cfg.cls_test_src_path.empty()) {
      cls_test_src = load_pair_examples(cfg.cls_test_src_path);
      cls_test_mixed = make_mixed_pairs(cls_test_tgt, cls_test_src,
                                        derive_seed(cfg.data.data_seed, "mixed"));
    }
    if (!cfg.tag_train_path.empty()) tag_train = load_tagged(cfg.tag_train_path, tag_names);
    if (!cfg.tag_test_path.empty()) tag_test = load_tagged(cfg.tag_test_path, tag_names);
    if (!cfg.xsr_queries_path.empty()) xsr_queries = load_sentence_lines(cfg.xsr_queries_path);
    if (!cfg.xsr_corpus_path.empty()) xsr_corpus = load_sentence_lines(cfg.xsr_corpus_path);
  }

  save_parallel(parallel, cdir + "/parallel.txt");
  if (!gold.empty()) save_pharaoh(gold, cdir + "/gold.pharaoh");
  if (!cls_train.empty()) save_pair_examples(cls_train, cdir + "/cls_train.tsv");
  if (!cls_test_tgt.empty()) save_pair_examples(cls_test_tgt, cdir + "/cls_test_tgt.tsv");
  if (!cls_test_src.empty()) save_pair_examples(cls_test_src, cdir + "/cls_test_src.tsv");
  if (!cls_test_mixed.empty()) save_pair_examples(cls_test_mixed, cdir + "/cls_test_mixed.tsv");
  if (!tag_train.empty()) save_tagged(tag_train, tag_names, cdir + "/tag_train.tsv");
  if (!tag_test.empty()) save_tagged(tag_test, tag_names, cdir + "/tag_test_tgt.tsv");
  if (!xsr_queries.empty()) save_sentence_lines(xsr_queries, cdir + "/xsr_queries.txt");
  if (!xsr_corpus.empty()) save_sentence_lines(xsr_corpus, cdir + "/xsr_corpus.txt");
  {
    std::ofstream f(cdir + "/tags.txt", std::ios::binary);
    for (const auto& t : tag_names) f << t << "\n";
  }

  // Shared subword vocabulary over both sides of the parallel pool.
  std::vector<std::vector<std::string>> text;
  for (const auto& p : parallel.pairs) {
    text.push_back(p.src);
    text.push_back(p.tgt);
  }
  auto vocab = train_subword_vocab(text, cfg.bpe_vocab_size, cfg.data.data_seed);
  save_vocab(vocab, cdir + "/vocab.txt");
}

void stage_pretrain(const RunConfig& cfg, const std::string& run_dir, uint64_t seed) {
  const std::string cdir = corpus_dir(run_dir);
  SeedPaths sp(run_dir, seed);
  fs::create_directories(sp.dir);

  auto vocab = load_vocab(cdir + "/vocab.txt");
  auto parallel = load_parallel(cdir + "/parallel.txt");
  std::vector<TokenizedSentence> sentences;
  sentences.reserve(parallel.size() * 2);
  for (const auto& p : parallel.pairs) {
    sentences.push_back(tokenize_with_spans(vocab, p.src));
    sentences.push_back(tokenize_with_spans(vocab, p.tgt));
  }

  EncoderWeights w = init_encoder(resolved_encoder_config(cfg, vocab), derive_seed(seed, "init"));
  MlmConfig mlm;
  mlm.steps = cfg.pretrain.steps;
  mlm.batch = cfg.pretrain.batch;
  mlm.mask_prob = cfg.pretrain.mask_prob;
  mlm.lr = cfg.pretrain.lr;
  mlm.seed = derive_seed(seed, "mlm");
  auto trace = pretrain_mlm(w, sentences, mlm);

  save_checkpoint(w, sp.model_original);
  std::ofstream f(sp.dir + "/mlm_trace.csv", std::ios::binary);
  f << "step,loss\n";
  for (size_t i = 0; i < trace.size(); ++i) f << i << "," << trace[i] << "\n";
}

void stage_align(const RunConfig& cfg, const std::string& run_dir, uint64_t seed) {
  const std::string cdir = corpus_dir(run_dir);
  SeedPaths sp(run_dir, seed);
  fs::create_directories(sp.dir);

  auto pool = load_parallel(cdir + "/parallel.txt");
  const size_t n = std::min(cfg.align.sample, pool.size());
  auto sample = sample_sentences(pool, n, derive_seed(seed, "sample"));
  save_parallel(sample, sp.sample);

  auto fwd_model = train_model2(sample, cfg.align.iterations, Direction::SrcToTgt);
  auto rev_model = train_model2(sample, cfg.align.iterations, Direction::TgtToSrc);
  auto fwd_links = viterbi_align_corpus(fwd_model, sample);
  auto rev_links = viterbi_align_corpus(rev_model, sample);
  auto sym = symmetrize_corpus(fwd_links, rev_links, cfg.align.heuristic);

  save_pharaoh(fwd_links, sp.align_fwd);
  save_pharaoh(rev_links, sp.align_rev);
  save_pharaoh(sym, sp.align_sym);
  save_model2(fwd_model, sp.dir + "/ttable_forward.tsv");
  save_model2(rev_model, sp.dir + "/ttable_reverse.tsv");

  json metrics;
  metrics["nll_forward"] = fwd_model.nll_trace;
  metrics["nll_reverse"] = rev_model.nll_trace;
  metrics["lambda_forward"] = fwd_model.lambda;
  metrics["lambda_reverse"] = rev_model.lambda;
  size_t n_links = 0;
  for (const auto& s : sym) n_links += s.size();
  metrics["sym_links"] = n_links;

  const std::string gold_path = cdir + "/gold.pharaoh";
  if (fs::exists(gold_path)) {
    auto gold_all = load_pharaoh(gold_path);
    AlignmentLinkSet gold_sub;
    gold_sub.reserve(sample.size());
    for (const auto& p : sample.pairs) gold_sub.push_back(gold_all.at(size_t(p.id)));
    metrics["aer_forward"] = alignment_error_rate(fwd_links, gold_sub);
    metrics["aer_reverse"] = alignment_error_rate(rev_links, gold_sub);
    metrics["aer_sym"] = alignment_error_rate(sym, gold_sub);
  }
  write_json(sp.dir + "/align_metrics.json", metrics);
}

void stage_adjust(const RunConfig& cfg, const std::string& run_dir, uint64_t seed) {
  const std::string cdir = corpus_dir(run_dir);
  SeedPaths sp(run_dir, seed);
  auto vocab = load_vocab(cdir + "/vocab.txt");
  auto model = load_checkpoint(sp.model_original);
  auto pairs = rebuild_word_pairs(cfg, vocab, sp, seed);

  AdjustConfig acfg = cfg.adjust;
  acfg.seed = derive_seed(seed, "adjust");
  auto result = adjust(model, pairs, acfg);
  save_checkpoint(result.weights, sp.model_adjusted);
  write_loss_trace(result.trace, sp.dir + "/adjust_trace.csv");
}

void stage_finetune(const RunConfig& cfg, const std::string& run_dir, uint64_t seed) {
  const std::string cdir = corpus_dir(run_dir);
  SeedPaths sp(run_dir, seed);
  auto vocab = load_vocab(cdir + "/vocab.txt");
  auto original = load_checkpoint(sp.model_original);
  auto adjusted = load_checkpoint(sp.model_adjusted);
  auto pairs = rebuild_word_pairs(cfg, vocab, sp, seed);
  AnchorModel anchor{original};

  FinetuneConfig ft = cfg.finetune;
  ft.seed = derive_seed(seed, "finetune");

  if (fs::exists(cdir + "/cls_train.tsv")) {
    auto train = load_pair_examples(cdir + "/cls_train.tsv");
    const int labels = label_count(train);
    const TaskHead head0 = init_task_head(TaskKind::PairClassification,
                                          original.config.model_dim, labels,
                                          derive_seed(seed, "cls_head"));
    {
      EncoderWeights m = original;
      TaskHead h = head0;
      auto r = finetune(m, h, train, vocab, ft);
      save_checkpoint(m, sp.cls_ckpt("original"));
      save_task_head(h, sp.cls_head("original"));
      write_ft_trace(r, sp.dir + "/ft_cls_original_trace.csv");
    }
    {
      EncoderWeights m = adjusted;
      TaskHead h = head0;
      auto r = finetune(m, h, train, vocab, ft);
      save_checkpoint(m, sp.cls_ckpt("adjusted"));
      save_task_head(h, sp.cls_head("adjusted"));
      write_ft_trace(r, sp.dir + "/ft_cls_adjusted_trace.csv");
    }
    {
      EncoderWeights m = adjusted;
      TaskHead h = head0;
      auto r = finetune_continual(m, h, train, vocab, pairs, anchor, ft);
      save_checkpoint(m, sp.cls_ckpt("adjusted_continual"));
      save_task_head(h, sp.cls_head("adjusted_continual"));
      write_ft_trace(r, sp.dir + "/ft_cls_adjusted_continual_trace.csv");
    }
  }

  if (fs::exists(cdir + "/tag_train.tsv")) {
    auto tag_names = load_name_lines(cdir + "/tags.txt");
    auto train = load_tagged(cdir + "/tag_train.tsv", tag_names);
    const TaskHead head0 =
        init_task_head(TaskKind::TokenTagging, original.config.model_dim, int(tag_names.size()),
                       derive_seed(seed, "tag_head"));
    {
      EncoderWeights m = original;
      TaskHead h = head0;
      finetune_tagging(m, h, train, vocab, ft);
      save_checkpoint(m, sp.tag_ckpt("original"));
      save_task_head(h, sp.tag_head("original"));
    }
    {
      EncoderWeights m = adjusted;
      TaskHead h = head0;
      finetune_tagging(m, h, train, vocab, ft);
      save_checkpoint(m, sp.tag_ckpt("adjusted"));
      save_task_head(h, sp.tag_head("adjusted"));
    }
    {
      EncoderWeights m = adjusted;
      TaskHead h = head0;
      finetune_tagging_continual(m, h, train, vocab, pairs, anchor, ft);
      save_checkpoint(m, sp.tag_ckpt("adjusted_continual"));
      save_task_head(h, sp.tag_head("adjusted_continual"));
    }
  }
}

void stage_evaluate(const RunConfig& cfg, const std::string& run_dir, uint64_t seed) {
  (void)cfg;
  const std::string cdir = corpus_dir(run_dir);
  SeedPaths sp(run_dir, seed);
  auto vocab = load_vocab(cdir + "/vocab.txt");

  json out;
  if (fs::exists(cdir + "/cls_test_tgt.tsv")) {
    auto test_tgt = load_pair_examples(cdir + "/cls_test_tgt.tsv");
    std::vector<PairExample> test_mixed, test_src;
    if (fs::exists(cdir + "/cls_test_mixed.tsv")) {
      test_mixed = load_pair_examples(cdir + "/cls_test_mixed.tsv");
    }
    if (fs::exists(cdir + "/cls_test_src.tsv")) {
      test_src = load_pair_examples(cdir + "/cls_test_src.tsv");
    }
    for (const char* scenario : kFtScenarios) {
      auto model = load_checkpoint(sp.cls_ckpt(scenario));
      auto head = load_task_head(sp.cls_head(scenario));
      auto ev = evaluate_classification(model, head, test_tgt, vocab);
      json s;
      s["target_accuracy"] = ev.accuracy;
      s["target_correct"] = std::vector<int>(ev.correct.begin(), ev.correct.end());
      write_classification_dump(sp.dir + "/dump_cls_" + scenario + "_target.csv", seed, ev);
      if (!test_mixed.empty()) {
        auto evm = evaluate_classification(model, head, test_mixed, vocab);
        s["mixed_accuracy"] = evm.accuracy;
        s["mixed_correct"] = std::vector<int>(evm.correct.begin(), evm.correct.end());
        write_classification_dump(sp.dir + "/dump_cls_" + scenario + "_mixed.csv", seed, evm);
      }
      if (!test_src.empty()) {
        s["source_accuracy"] = evaluate_classification(model, head, test_src, vocab).accuracy;
      }
      out["classification"][scenario] = std::move(s);
    }
  }

  if (fs::exists(cdir + "/tag_test_tgt.tsv")) {
    auto tag_names = load_name_lines(cdir + "/tags.txt");
    auto test = load_tagged(cdir + "/tag_test_tgt.tsv", tag_names);
    for (const char* scenario : kFtScenarios) {
      auto model = load_checkpoint(sp.tag_ckpt(scenario));
      auto head = load_task_head(sp.tag_head(scenario));
      auto ev = evaluate_tagging(model, head, test, vocab);
      json s;
      s["f1"] = ev.micro_f1;
      s["predictions"] = ev.predictions;
      write_tagging_dump(sp.dir + "/dump_tag_" + scenario + ".csv", seed, test, ev);
      out["tagging"][scenario] = std::move(s);
    }
  }
  write_json(sp.dir + "/evaluation.json", out);
}

void stage_analyze(const RunConfig& cfg, const std::string& run_dir, uint64_t seed) {
  const std::string cdir = corpus_dir(run_dir);
  SeedPaths sp(run_dir, seed);
  auto vocab = load_vocab(cdir + "/vocab.txt");
  auto sample = load_parallel(sp.sample);
  auto links = load_pharaoh(sp.align_sym);

  size_t total_links = 0;
  for (const auto& s : links) total_links += s.size();
  const int n_related = int(std::min<size_t>(size_t(cfg.analysis.n_related), total_links));
  auto dist_sample = sample_distance_pairs(sample, vocab, links, n_related,
                                           cfg.analysis.n_unrelated,
                                           derive_seed(seed, "distpairs"));

  auto original = load_checkpoint(sp.model_original);
  auto adjusted = load_checkpoint(sp.model_adjusted);
  auto original_ft = load_checkpoint(sp.cls_ckpt("original"));
  auto adjusted_ft = load_checkpoint(sp.cls_ckpt("adjusted"));
  auto adjusted_cont = load_checkpoint(sp.cls_ckpt("adjusted_continual"));

  std::map<std::string, const EncoderWeights*> scenarios = {
      {"original", &original},
      {"adjusted", &adjusted},
      {"original_finetuned", &original_ft},
      {"adjusted_finetuned", &adjusted_ft},
      {"adjusted_continual", &adjusted_cont}};
  scenario_suite(scenarios, dist_sample, cfg.analysis.bins, cfg.analysis.layer,
                 cfg.adjust.pooling, sp.dir);
}

void stage_xsr(const RunConfig& cfg, const std::string& run_dir, uint64_t seed) {
  (void)cfg;
  const std::string cdir = corpus_dir(run_dir);
  SeedPaths sp(run_dir, seed);
  if (!fs::exists(cdir + "/xsr_queries.txt")) return;
  auto vocab = load_vocab(cdir + "/vocab.txt");
  auto queries_w = load_sentence_lines(cdir + "/xsr_queries.txt");
  auto corpus_w = load_sentence_lines(cdir + "/xsr_corpus.txt");
  if (queries_w.size() != corpus_w.size()) {
    throw std::runtime_error("xsr: query/corpus line counts differ");
  }
  std::vector<TokenizedSentence> queries, corpus;
  for (const auto& s : queries_w) queries.push_back(tokenize_with_spans(vocab, s));
  for (const auto& s : corpus_w) corpus.push_back(tokenize_with_spans(vocab, s));
  std::vector<int> gold(queries.size());
  for (size_t i = 0; i < gold.size(); ++i) gold[i] = int(i);

  struct Entry {
    const char* name;
    std::string path;
  };
  const std::vector<Entry> models = {{"original", sp.model_original},
                                     {"adjusted", sp.model_adjusted},
                                     {"original_finetuned", sp.cls_ckpt("original")},
                                     {"adjusted_finetuned", sp.cls_ckpt("adjusted")},
                                     {"adjusted_continual", sp.cls_ckpt("adjusted_continual")}};
  json out;
  for (const auto& e : models) {
    if (!fs::exists(e.path)) continue;
    auto model = load_checkpoint(e.path);
    auto best = best_layer(model, queries, corpus, gold);
    out[e.name] = {{"best_layer", best.layer},
                   {"mrr", best.result.mrr},
                   {"per_layer_mrr", best.per_layer_mrr}};
  }
  write_json(sp.dir + "/xsr.json", out);
}

void stage_stats(const RunConfig& cfg, const std::string& run_dir) {
  const std::string cdir = corpus_dir(run_dir);
  json summary;
  summary["seeds"] = cfg.seeds;

  // Per-seed evaluation artifacts.
  std::vector<json> evals, xsrs, hists;
  for (uint64_t seed : cfg.seeds) {
    SeedPaths sp(run_dir, seed);
    evals.push_back(fs::exists(sp.dir + "/evaluation.json") ? read_json(sp.dir + "/evaluation.json")
                                                            : json());
    xsrs.push_back(fs::exists(sp.dir + "/xsr.json") ? read_json(sp.dir + "/xsr.json") : json());
    hists.push_back(fs::exists(sp.dir + "/histogram_summary.json")
                        ? read_json(sp.dir + "/histogram_summary.json")
                        : json());
  }

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
  };

  // Classification: per-seed accuracies plus per-example seed-averaged
  // correctness for the paired t-tests.
  if (!evals.empty() && evals[0].contains("classification")) {
    json cls;
    std::map<std::string, std::vector<double>> seed_acc, seed_acc_mixed;
    std::map<std::string, SeedMatrix> matrices;
    for (const char* scenario : kFtScenarios) {
      SeedMatrix m;
      m.seeds = int(cfg.seeds.size());
      for (size_t k = 0; k < cfg.seeds.size(); ++k) {
        const json& s = evals[k].at("classification").at(scenario);
        seed_acc[scenario].push_back(s.at("target_accuracy").get<double>());
        if (s.contains("mixed_accuracy")) {
          seed_acc_mixed[scenario].push_back(s.at("mixed_accuracy").get<double>());
        }
        const auto correct = s.at("target_correct").get<std::vector<int>>();
        if (k == 0) {
          m.examples = int(correct.size());
          m.values.assign(size_t(m.examples) * size_t(m.seeds), 0.0);
        }
        for (int e = 0; e < m.examples; ++e) m.at(e, int(k)) = double(correct[size_t(e)]);
      }
      matrices[scenario] = std::move(m);
      cls["target"][scenario] = {{"per_seed", seed_acc[scenario]},
                                 {"mean", mean_of(seed_acc[scenario])}};
      if (!seed_acc_mixed[scenario].empty()) {
        cls["mixed"][scenario] = {{"per_seed", seed_acc_mixed[scenario]},
                                  {"mean", mean_of(seed_acc_mixed[scenario])}};
      }
    }

    auto t_block = [&](const char* base, const char* improved) {
      const auto a = matrices.at(base).per_example_means();
      const auto b = matrices.at(improved).per_example_means();
      const auto r = paired_t_test(a, b);
      const double mean_a = mean_of(seed_acc[base]);
      const double mean_b = mean_of(seed_acc[improved]);
      json out = {{"t", r.t},
                  {"p", r.p},
                  {"significant", r.p < 0.05},
                  {"direction_holds", mean_b > mean_a},
                  {"degenerate", r.degenerate}};
      return out;
    };
    cls["significance"]["adjusted_vs_original"] = t_block("original", "adjusted");
    cls["significance"]["continual_vs_adjusted"] = t_block("adjusted", "adjusted_continual");
    summary["classification"] = std::move(cls);
  }

  // Tagging: permutation test over predictions concatenated across seeds.
  if (!evals.empty() && evals[0].contains("tagging")) {
    auto tag_names = load_name_lines(cdir + "/tags.txt");
    auto test = load_tagged(cdir + "/tag_test_tgt.tsv", tag_names);
    std::vector<std::vector<int>> gold_once;
    for (const auto& s : test) gold_once.push_back(s.tags);

    json tag;
    std::map<std::string, std::vector<std::vector<int>>> concat;
    std::vector<std::vector<int>> gold_concat;
    for (const char* scenario : kFtScenarios) {
      std::vector<double> f1s;
      for (size_t k = 0; k < cfg.seeds.size(); ++k) {
        const json& s = evals[k].at("tagging").at(scenario);
        f1s.push_back(s.at("f1").get<double>());
        const auto preds = s.at("predictions").get<std::vector<std::vector<int>>>();
        auto& c = concat[scenario];
        c.insert(c.end(), preds.begin(), preds.end());
      }
      tag["target"][scenario] = {{"per_seed", f1s}, {"mean", mean_of(f1s)}};
    }
    for (size_t k = 0; k < cfg.seeds.size(); ++k) {
      gold_concat.insert(gold_concat.end(), gold_once.begin(), gold_once.end());
    }
    const uint64_t pseed = derive_seed(cfg.data.data_seed, "permutation");
    auto perm_block = [&](const char* base, const char* improved) {
      const double p = permutation_test(concat.at(base), concat.at(improved), gold_concat,
                                        PermMetric::MicroF1, 1000, pseed);
      const double mean_a = tag["target"][base]["mean"].get<double>();
      const double mean_b = tag["target"][improved]["mean"].get<double>();
      return json{{"p", p},
                  {"significant", p < 0.05},
                  {"direction_holds", mean_b > mean_a},
                  {"iterations", 1000}};
    };
    tag["significance"]["adjusted_vs_original"] = perm_block("original", "adjusted");
    tag["significance"]["continual_vs_adjusted"] = perm_block("adjusted", "adjusted_continual");
    summary["tagging"] = std::move(tag);
  }

  if (!xsrs.empty() && !xsrs[0].empty()) {
    json xsr;
    for (auto& [scenario, first] : xsrs[0].items()) {
      (void)first;
      std::vector<double> mrrs;
      std::vector<int> layers;
      for (size_t k = 0; k < cfg.seeds.size(); ++k) {
        mrrs.push_back(xsrs[k].at(scenario).at("mrr").get<double>());
        layers.push_back(xsrs[k].at(scenario).at("best_layer").get<int>());
      }
      xsr[scenario] = {{"per_seed_mrr", mrrs}, {"mean_mrr", mean_of(mrrs)},
                       {"best_layers", layers}};
    }
    summary["xsr"] = std::move(xsr);
  }

  if (!hists.empty() && !hists[0].empty()) {
    json an;
    std::map<std::string, std::vector<double>> overlaps;
    for (const char* scenario : kScenarioNames) {
      for (size_t k = 0; k < cfg.seeds.size(); ++k) {
        overlaps[scenario].push_back(hists[k].at(scenario).at("overlap").get<double>());
      }
      an["overlap"][scenario] = {{"per_seed", overlaps[scenario]},
                                 {"mean", mean_of(overlaps[scenario])}};
    }
    // Qualitative ordering, checked per seed.
    bool adj_lt_orig = true, ft_gt_adj = true, cont_lt_ft = true;
    for (size_t k = 0; k < cfg.seeds.size(); ++k) {
      adj_lt_orig &= overlaps["adjusted"][k] < overlaps["original"][k];
      ft_gt_adj &= overlaps["adjusted_finetuned"][k] > overlaps["adjusted"][k];
      cont_lt_ft &= overlaps["adjusted_continual"][k] < overlaps["adjusted_finetuned"][k];
    }
    an["ordering"] = {{"adjusted_lt_original", adj_lt_orig},
                      {"finetuned_gt_adjusted", ft_gt_adj},
                      {"continual_lt_finetuned", cont_lt_ft}};
    summary["analysis"] = std::move(an);
  }

  write_json(run_dir + "/summary.json", summary);
}

void run_pipeline(const RunConfig& cfg, const std::string& run_dir, int jobs) {
  if (jobs < 1) jobs = 1;
  fs::create_directories(run_dir);
  write_file(run_dir + "/config.json", cfg.to_json_text());
  Manifest manifest(run_dir);

  auto run_stage = [&](const std::string& name, uint64_t seed, auto&& fn) {
    const std::string tag =
        seed == 0 ? name : name + " (seed " + std::to_string(seed) + ")";
    try {
      fn();
      manifest.mark(tag, "done");
    } catch (const std::exception& e) {
      manifest.mark(tag, std::string("failed: ") + e.what());
      manifest.refresh_and_save();
      throw std::runtime_error("stage " + tag + ": " + e.what());
    }
  };

  if (cfg.stages.generate) {
    run_stage("generate", 0, [&] { stage_generate(cfg, run_dir); });
  }

  auto run_seed = [&](uint64_t seed) {
    if (cfg.stages.pretrain) {
      run_stage("pretrain", seed, [&] { stage_pretrain(cfg, run_dir, seed); });
    }
    if (cfg.stages.align) {
      run_stage("align", seed, [&] { stage_align(cfg, run_dir, seed); });
    }
    if (cfg.stages.adjust) {
      run_stage("adjust", seed, [&] { stage_adjust(cfg, run_dir, seed); });
    }
    if (cfg.stages.finetune) {
      run_stage("finetune", seed, [&] { stage_finetune(cfg, run_dir, seed); });
    }
    if (cfg.stages.evaluate) {
      run_stage("evaluate", seed, [&] { stage_evaluate(cfg, run_dir, seed); });
    }
    if (cfg.stages.analyze) {
      run_stage("analyze", seed, [&] { stage_analyze(cfg, run_dir, seed); });
    }
    if (cfg.stages.xsr) {
      run_stage("xsr", seed, [&] { stage_xsr(cfg, run_dir, seed); });
    }
  };

  if (jobs == 1 || cfg.seeds.size() == 1) {
    for (uint64_t seed : cfg.seeds) run_seed(seed);
  } else {
    std::vector<std::thread> workers;
    std::mutex err_mutex;
    std::string first_error;
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        for (size_t i = size_t(w); i < cfg.seeds.size(); i += size_t(jobs)) {
          try {
            run_seed(cfg.seeds[i]);
          } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (first_error.empty()) first_error = e.what();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    if (!first_error.empty()) throw std::runtime_error(first_error);
  }

  if (cfg.stages.stats) {
    run_stage("stats", 0, [&] { stage_stats(cfg, run_dir); });
  }
  manifest.refresh_and_save();
}

}  // namespace xladj
