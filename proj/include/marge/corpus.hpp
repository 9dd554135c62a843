#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace marge {

// Reserved vocabulary ids, fixed across the project.
constexpr int PAD_ID = 0;
constexpr int BOS_ID = 1;
constexpr int EOS_ID = 2;
constexpr int UNK_ID = 3;
constexpr int NUM_RESERVED = 4;

constexpr long long NO_GROUP = -1;

// Token <-> id maps with a reserved header block and one language-id token
// per language.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(const std::vector<std::string>& language_tags, int base_vocab_size);

  int id_of(const std::string& token) const;         // UNK_ID + warning count if unknown
  int id_of_strict(const std::string& token) const;  // throws if unknown
  const std::string& token_of(int id) const;
  int lang_token(const std::string& tag) const;  // throws on unknown language
  bool has_lang(const std::string& tag) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& language_tags() const { return lang_tags_; }
  long long unknown_token_count() const { return unk_count_; }

  // Language tag a surface token belongs to; empty for reserved/lang-id tokens.
  std::string language_of_token(int id) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> lang_tags_;
  std::map<std::string, int> lang_token_ids_;
  mutable long long unk_count_ = 0;

  void finish_build();
};

// A tokenized chunk with the metadata sharding and evaluation need.
struct Document {
  long long id = 0;
  std::string lang;
  std::string date;             // shard key, news mode
  long long article_group = -1; // shard key, wiki mode
  long long group = NO_GROUP;   // translation-group id (ground truth)
  bool first_chunk = true;
  std::vector<std::string> words;  // surface tokens, no specials
  std::vector<int> tokens;         // [BOS, word ids...]

  int token_count() const { return static_cast<int>(tokens.size()); }
};

struct Corpus {
  std::vector<Document> docs;  // ascending id
  std::unordered_map<long long, size_t> by_id;

  void rebuild_index();
  const Document& doc(long long id) const;
  bool has(long long id) const { return by_id.count(id) > 0; }
  size_t size() const { return docs.size(); }
};

// Deterministic word substitution plus a fixed local reorder within windows.
struct CipherLanguage {
  std::string tag;
  int window = 1;                 // 1 = no reorder
  std::vector<int> forward_map;   // base id -> surface index
  std::vector<int> inverse_map;   // surface index -> base id
  std::vector<int> window_perm;   // permutation applied inside each full window

  std::vector<std::string> encipher(const std::vector<int>& base_ids) const;
  std::vector<int> decipher(const std::vector<std::string>& surface) const;
  std::string surface_token(int base_id) const;
};

struct CorpusConfig {
  int n_topics = 150;
  int docs_per_topic = 3;  // per language: 1 primary render + paraphrases
  int n_languages = 6;
  int base_vocab_size = 300;
  int doc_length = 48;      // max content words per document
  int function_words = 40;  // ids [0, function_words) are shared filler
  int topic_pool = 40;      // topic-specific content words

  void validate() const;
};

struct ToyCorpus {
  Corpus corpus;
  Vocabulary vocab;
  std::vector<CipherLanguage> languages;
};

// Cipher-language corpus over shared topics; deterministic in (config, seed).
ToyCorpus generate_toy_corpus(const CorpusConfig& cfg, uint64_t seed);

// Split content words into chunks of at most max_len, reassigning fresh ids.
Corpus chunk_documents(const Corpus& corpus, int max_len);

// Drop exact token-sequence duplicates, keeping the lowest id.
Corpus dedup(const Corpus& corpus);

struct JsonlLoadResult {
  Corpus corpus;
  long long unknown_tokens = 0;
};

void save_jsonl(const Corpus& corpus, const std::string& path);
JsonlLoadResult load_jsonl(const std::string& path, const Vocabulary& vocab);

}  // namespace marge
