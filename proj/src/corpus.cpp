#include "xladj/corpus.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xladj/rng.hpp"

namespace xladj {

std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

ParallelCorpus load_parallel(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open parallel file: " + path);
  ParallelCorpus corpus;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string sep = " ||| ";
    auto pos = line.find(sep);
    if (pos == std::string::npos) {
      std::ostringstream os;
      os << path << ": line " << line_no << ": missing \" ||| \" separator";
      throw std::runtime_error(os.str());
    }
    SentencePair p;
    p.src = split_whitespace(line.substr(0, pos));
    p.tgt = split_whitespace(line.substr(pos + sep.size()));
    if (p.src.empty() || p.tgt.empty()) {
      std::ostringstream os;
      os << path << ": line " << line_no << ": empty "
         << (p.src.empty() ? "source" : "target") << " side";
      throw std::runtime_error(os.str());
    }
    p.id = line_no - 1;
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

void save_parallel(const ParallelCorpus& corpus, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& p : corpus.pairs) {
    f << join(p.src) << " ||| " << join(p.tgt) << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

ParallelCorpus sample_sentences(const ParallelCorpus& corpus, size_t n, uint64_t seed) {
  if (n > corpus.size()) {
    std::ostringstream os;
    os << "sample size " << n << " exceeds corpus size " << corpus.size();
    throw std::runtime_error(os.str());
  }
  Rng rng(seed);
  auto idx = rng.sample_without_replacement(corpus.size(), n);
  ParallelCorpus out;
  out.pairs.reserve(n);
  for (size_t i : idx) out.pairs.push_back(corpus.pairs[i]);  // ids preserved
  return out;
}

std::vector<PairExample> make_mixed_pairs(const std::vector<PairExample>& labeled_pairs,
                                          const std::vector<PairExample>& source_pairs,
                                          uint64_t seed) {
  if (labeled_pairs.size() != source_pairs.size()) {
    std::ostringstream os;
    os << "make_mixed_pairs: size mismatch (" << labeled_pairs.size() << " vs "
       << source_pairs.size() << ")";
    throw std::runtime_error(os.str());
  }
  Rng rng(seed);
  std::vector<PairExample> out = labeled_pairs;
  for (size_t i = 0; i < out.size(); ++i) {
    if (rng.coin()) {
      out[i].premise = source_pairs[i].premise;
    } else {
      out[i].hypothesis = source_pairs[i].hypothesis;
    }
  }
  return out;
}

CipherCorpus make_cipher_corpus(const std::vector<std::vector<std::string>>& source_sentences,
                                const std::map<std::string, std::string>& cipher,
                                ReorderRule reorder, uint64_t seed) {
  Rng rng(seed);
  CipherCorpus out;
  out.corpus.pairs.reserve(source_sentences.size());
  out.gold.reserve(source_sentences.size());
  int64_t id = 0;
  for (const auto& words : source_sentences) {
    SentencePair p;
    p.src = words;
    p.id = id++;
    std::vector<int> perm(words.size());
    for (size_t i = 0; i < words.size(); ++i) perm[i] = int(i);
    if (reorder == ReorderRule::AdjacentSwap) {
      for (size_t i = 0; i + 1 < perm.size(); ++i) {
        if (rng.coin()) {
          std::swap(perm[i], perm[i + 1]);
          ++i;  // swaps don't overlap
        }
      }
    }
    p.tgt.resize(words.size());
    LinkSet links;
    for (size_t j = 0; j < perm.size(); ++j) {
      const std::string& src_word = words[size_t(perm[j])];
      auto it = cipher.find(src_word);
      if (it == cipher.end()) {
        throw std::runtime_error("cipher does not cover word: " + src_word);
      }
      p.tgt[j] = it->second;
      links.insert({perm[j], int(j)});
    }
    out.corpus.pairs.push_back(std::move(p));
    out.gold.push_back(std::move(links));
  }
  return out;
}

std::vector<PairExample> load_pair_examples(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open task file: " + path);
  std::vector<PairExample> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      std::ostringstream os;
      os << path << ": line " << line_no << ": expected premise<TAB>hypothesis<TAB>label";
      throw std::runtime_error(os.str());
    }
    PairExample e;
    e.premise = split_whitespace(line.substr(0, t1));
    e.hypothesis = split_whitespace(line.substr(t1 + 1, t2 - t1 - 1));
    try {
      e.label = std::stoi(line.substr(t2 + 1));
    } catch (const std::exception&) {
      std::ostringstream os;
      os << path << ": line " << line_no << ": label is not an integer";
      throw std::runtime_error(os.str());
    }
    out.push_back(std::move(e));
  }
  return out;
}

void save_pair_examples(const std::vector<PairExample>& data, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& e : data) {
    f << join(e.premise) << "\t" << join(e.hypothesis) << "\t" << e.label << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<TaggedSentence> load_tagged(const std::string& path,
                                        const std::vector<std::string>& tag_names) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open tagged file: " + path);
  std::map<std::string, int> tag_id;
  for (size_t i = 0; i < tag_names.size(); ++i) tag_id[tag_names[i]] = int(i);
  std::vector<TaggedSentence> out;
  TaggedSentence cur;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (!cur.tokens.empty()) {
        out.push_back(std::move(cur));
        cur = {};
      }
      continue;
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      std::ostringstream os;
      os << path << ": line " << line_no << ": expected token<TAB>tag";
      throw std::runtime_error(os.str());
    }
    std::string tag = line.substr(tab + 1);
    auto it = tag_id.find(tag);
    if (it == tag_id.end()) {
      std::ostringstream os;
      os << path << ": line " << line_no << ": unknown tag \"" << tag << "\"";
      throw std::runtime_error(os.str());
    }
    cur.tokens.push_back(line.substr(0, tab));
    cur.tags.push_back(it->second);
  }
  if (!cur.tokens.empty()) out.push_back(std::move(cur));
  return out;
}

void save_tagged(const std::vector<TaggedSentence>& data,
                 const std::vector<std::string>& tag_names, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& s : data) {
    for (size_t i = 0; i < s.tokens.size(); ++i) {
      f << s.tokens[i] << "\t" << tag_names[size_t(s.tags[i])] << "\n";
    }
    f << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

void save_pharaoh(const AlignmentLinkSet& links, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& sent : links) {
    bool first = true;
    for (const auto& [i, j] : sent) {
      if (!first) f << ' ';
      f << i << '-' << j;
      first = false;
    }
    f << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

AlignmentLinkSet load_pharaoh(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open alignment file: " + path);
  AlignmentLinkSet out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    LinkSet links;
    for (const auto& tok : split_whitespace(line)) {
      auto dash = tok.find('-');
      if (dash == std::string::npos) {
        throw std::runtime_error("bad pharaoh token \"" + tok + "\" in " + path);
      }
      links.insert({std::stoi(tok.substr(0, dash)), std::stoi(tok.substr(dash + 1))});
    }
    out.push_back(std::move(links));
  }
  return out;
}

}  // namespace xladj
