#pragma once

#include <array>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace tcr {

enum class TaskId { Cpn, Trg, Qa, Stg, Lta };

inline const char* task_token(TaskId t) {
  switch (t) {
    case TaskId::Cpn: return "[CPN]";
    case TaskId::Trg: return "[TRG]";
    case TaskId::Qa: return "[QA]";
    case TaskId::Stg: return "[STG]";
    case TaskId::Lta: return "[LTA]";
  }
  throw std::invalid_argument("unknown task id");
}

// Closed text world shared by the generators, the resampler conditioning and
// the language model: template words, nouns x verbs, time tokens rendered as
// "[k]", and the integer tokens "1".."n_int_tokens" used for span decoding.
struct GrammarConfig {
  std::size_t n_nouns = 32;
  std::size_t n_verbs = 16;
  std::size_t n_classes = 16;  // activity classes; class k -> (verb k % n_verbs, noun k)
  std::size_t n_bins = 2048;
  double bin_width = 0.5;
  std::size_t n_int_tokens = 1000;
};

namespace words {

inline const std::array<const char*, 32> kNouns = {
    "ball",   "box",    "cup",    "door",   "book",   "chair",  "table",  "lamp",
    "phone",  "bag",    "bottle", "plate",  "spoon",  "knife",  "towel",  "brush",
    "wheel",  "rope",   "shirt",  "shoe",   "clock",  "mirror", "window", "basket",
    "hammer", "ladder", "bucket", "camera", "guitar", "pillow", "wallet", "candle"};

inline const std::array<const char*, 16> kVerbs = {
    "lifts",  "drops", "opens", "closes", "pushes", "pulls", "turns", "shakes",
    "cleans", "moves", "holds", "taps",   "flips",  "spins", "folds", "stacks"};

inline const std::array<const char*, 60> kTemplate = {
    "the",       "person",      "what",     "happens",   "before",  "after",    "?",        ".",
    ":",         ",",           "(",        ")",         "from",    "to",       "Option",   "A",
    "B",         "C",           "D",        "E",         "select",  "correct",  "answer",   "options",
    "nothing",   "Reconstruct", "following","sentence",  "Complete","an",       "action",   "sequence",
    "is",        "one",         "verb",     "noun",      "pair",    "complete", "consists", "of",
    "actions",   "Actions",     "Return",   "a",         "frame",   "timestamps","where",   "happening",
    "The",       "What",        "Considering","information","in",   "frames",   "and",      "then",
    "video",     "clip",        "shows",    "someone"};

}  // namespace words

class Vocabulary {
 public:
  explicit Vocabulary(const GrammarConfig& cfg = {}) : cfg_(cfg) {
    add("<BOS>");
    add("<EOS>");
    add("[MASK]");
    for (TaskId t : {TaskId::Cpn, TaskId::Trg, TaskId::Qa, TaskId::Stg, TaskId::Lta}) add(task_token(t));
    for (const char* w : words::kTemplate) add(w);
    if (cfg.n_nouns > words::kNouns.size() || cfg.n_verbs > words::kVerbs.size())
      throw std::invalid_argument("grammar: noun/verb count exceeds word list");
    if (cfg.n_classes > cfg.n_nouns) throw std::invalid_argument("grammar: n_classes > n_nouns");
    for (std::size_t i = 0; i < cfg.n_nouns; ++i) add(words::kNouns[i]);
    for (std::size_t i = 0; i < cfg.n_verbs; ++i) add(words::kVerbs[i]);
    time_base_ = tokens_.size();
    for (std::size_t k = 0; k < cfg.n_bins; ++k) add("[" + std::to_string(k) + "]");
    int_base_ = tokens_.size();
    for (std::size_t v = 1; v <= cfg.n_int_tokens; ++v) add(std::to_string(v));
  }

  const GrammarConfig& grammar() const { return cfg_; }
  std::size_t size() const { return tokens_.size(); }

  bool contains(const std::string& tok) const { return ids_.count(tok) != 0; }

  std::size_t id(const std::string& tok) const {
    auto it = ids_.find(tok);
    if (it == ids_.end()) throw std::invalid_argument("token not in vocabulary: '" + tok + "'");
    return it->second;
  }

  const std::string& token(std::size_t id) const {
    if (id >= tokens_.size()) throw std::invalid_argument("token id out of range: " + std::to_string(id));
    return tokens_[id];
  }

  // Whitespace tokenization; every generated string is emitted pre-tokenized.
  std::vector<std::size_t> encode(const std::string& text) const {
    std::vector<std::size_t> out;
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) out.push_back(id(tok));
    return out;
  }

  std::string decode(const std::vector<std::size_t>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }

  std::size_t bos_id() const { return id("<BOS>"); }
  std::size_t eos_id() const { return id("<EOS>"); }
  std::size_t mask_id() const { return id("[MASK]"); }
  std::size_t task_id(TaskId t) const { return id(task_token(t)); }

  std::size_t time_token_id(std::size_t bin) const {
    if (bin >= cfg_.n_bins) throw std::invalid_argument("time bin out of range");
    return time_base_ + bin;
  }
  bool is_time_token(std::size_t id) const { return id >= time_base_ && id < time_base_ + cfg_.n_bins; }
  std::size_t bin_of(std::size_t id) const {
    if (!is_time_token(id)) throw std::invalid_argument("not a time token");
    return id - time_base_;
  }

  std::size_t int_token_id(std::size_t v) const {
    if (v < 1 || v > cfg_.n_int_tokens) throw std::invalid_argument("integer token out of range");
    return int_base_ + (v - 1);
  }
  bool is_int_token(std::size_t id) const { return id >= int_base_ && id < int_base_ + cfg_.n_int_tokens; }
  std::size_t int_of(std::size_t id) const {
    if (!is_int_token(id)) throw std::invalid_argument("not an integer token");
    return id - int_base_ + 1;
  }

  std::size_t noun_id(std::size_t i) const { return id(words::kNouns.at(i)); }
  std::size_t verb_id(std::size_t i) const { return id(words::kVerbs.at(i)); }
  std::size_t option_letter_id(std::size_t i) const {
    static const std::array<const char*, 5> letters = {"A", "B", "C", "D", "E"};
    return id(letters.at(i));
  }

  // One token per line, UTF-8, line number = token id.
  void save_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write vocabulary file: " + path);
    for (const std::string& t : tokens_) os << t << '\n';
  }

  static std::vector<std::string> read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read vocabulary file: " + path);
    std::vector<std::string> toks;
    std::string line;
    while (std::getline(is, line)) toks.push_back(line);
    return toks;
  }

 private:
  void add(const std::string& tok) {
    if (ids_.count(tok)) throw std::invalid_argument("duplicate vocabulary token: " + tok);
    ids_.emplace(tok, tokens_.size());
    tokens_.push_back(tok);
  }

  GrammarConfig cfg_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::size_t time_base_ = 0;
  std::size_t int_base_ = 0;
};

}  // namespace tcr
