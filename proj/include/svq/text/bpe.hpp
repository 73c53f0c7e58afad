#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace svq {

// Byte-pair encoding with an end-of-word suffix marker: "hello" starts as
// h e l l o</w>. Ids 0-3 are the special tokens.
class BpeModel {
 public:
  static constexpr int pad = 0, unk = 1, bos = 2, eos = 3;
  static constexpr const char* kEndOfWord = "</w>";

  // Greedy BPE: repeatedly merge the most frequent adjacent pair (ties go to
  // the lexicographically smallest pair) until the vocabulary holds
  // vocab_size entries or nothing is left to merge. vocab_size must be at
  // least 4 + alphabet size, where every character seen contributes both its
  // plain and its end-of-word form.
  static BpeModel train(const std::vector<std::string>& texts, std::size_t vocab_size);

  std::vector<int> encode(const std::string& text) const;
  // Drops pad/bos/eos, renders unk as "<unk>", and turns end-of-word markers
  // into single spaces (no trailing space).
  std::string decode(const std::vector<int>& ids) const;

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  const std::string& token(int id) const;
  int id(const std::string& token) const;  // -1 if absent

  nlohmann::json to_json() const;
  static BpeModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static BpeModel load(const std::string& path);

 private:
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> rank_;
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;

  void add_token(const std::string& t);
  void index_merges();
};

// ASCII lowercasing; other bytes pass through.
std::string lowercase(const std::string& s);
std::vector<std::string> split_words(const std::string& s);
// UTF-8 code points of a word (malformed bytes become single-byte symbols).
std::vector<std::string> utf8_chars(const std::string& word);

}  // namespace svq
