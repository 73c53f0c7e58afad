#include "svq/text/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace svq {

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<std::string> utf8_chars(const std::string& word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    const unsigned char b = static_cast<unsigned char>(word[i]);
    std::size_t n = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : (b >> 3) == 0x1E ? 4 : 1;
    if (i + n > word.size()) n = 1;
    out.push_back(word.substr(i, n));
    i += n;
  }
  return out;
}

namespace {

using Symbols = std::vector<std::string>;

Symbols initial_symbols(const std::string& word) {
  Symbols s = utf8_chars(word);
  s.back() += BpeModel::kEndOfWord;
  return s;
}

void apply_merge(Symbols& s, const std::string& a, const std::string& b) {
  Symbols out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i + 1 < s.size() && s[i] == a && s[i + 1] == b) {
      out.push_back(a + b);
      ++i;
    } else {
      out.push_back(s[i]);
    }
  }
  s = std::move(out);
}

}  // namespace

void BpeModel::add_token(const std::string& t) {
  if (ids_.count(t)) return;
  ids_[t] = static_cast<int>(tokens_.size());
  tokens_.push_back(t);
}

void BpeModel::index_merges() {
  rank_.clear();
  for (std::size_t i = 0; i < merges_.size(); ++i) rank_.emplace(merges_[i], i);
}

BpeModel BpeModel::train(const std::vector<std::string>& texts, std::size_t vocab_size) {
  std::map<std::string, std::size_t> word_freq;
  for (const auto& t : texts)
    for (const auto& w : split_words(lowercase(t))) ++word_freq[w];
  if (word_freq.empty()) throw std::invalid_argument("bpe_train: empty corpus");

  std::set<std::string> alphabet;
  for (const auto& [w, n] : word_freq) {
    for (const auto& c : utf8_chars(w)) {
      alphabet.insert(c);
      alphabet.insert(c + kEndOfWord);
    }
  }
  if (vocab_size < alphabet.size() + 4) {
    throw std::invalid_argument("bpe_train: vocab_size " + std::to_string(vocab_size) + " is below 4 specials + " +
                                std::to_string(alphabet.size()) + " alphabet symbols");
  }

  BpeModel m;
  for (const char* s : {"<pad>", "<unk>", "<bos>", "<eos>"}) m.add_token(s);
  for (const auto& a : alphabet) m.add_token(a);

  std::vector<std::pair<Symbols, std::size_t>> words;
  for (const auto& [w, n] : word_freq) words.emplace_back(initial_symbols(w), n);

  while (m.tokens_.size() < vocab_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> counts;
    for (const auto& [s, n] : words)
      for (std::size_t i = 0; i + 1 < s.size(); ++i) counts[{s[i], s[i + 1]}] += n;
    if (counts.empty()) break;
    // std::map iterates pairs in lexicographic order, so the first maximum wins ties.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second > best->second) best = it;
    const auto [a, b] = best->first;
    m.merges_.emplace_back(a, b);
    m.add_token(a + b);
    for (auto& [s, n] : words) apply_merge(s, a, b);
  }
  m.index_merges();
  return m;
}

std::vector<int> BpeModel::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(lowercase(text))) {
    Symbols s = initial_symbols(w);
    while (s.size() > 1) {
      std::size_t best = merges_.size();
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        auto it = rank_.find({s[i], s[i + 1]});
        if (it != rank_.end() && it->second < best) best = it->second;
      }
      if (best == merges_.size()) break;
      apply_merge(s, merges_[best].first, merges_[best].second);
    }
    for (const auto& sym : s) {
      const int i = id(sym);
      ids.push_back(i < 0 ? unk : i);
    }
  }
  return ids;
}

std::string BpeModel::decode(const std::vector<int>& ids) const {
  std::string out;
  const std::string eow = kEndOfWord;
  for (int i : ids) {
    if (i < 0 || static_cast<std::size_t>(i) >= tokens_.size()) {
      throw std::out_of_range("bpe decode: id " + std::to_string(i) + " outside vocabulary of " +
                              std::to_string(tokens_.size()));
    }
    if (i == pad || i == bos || i == eos) continue;
    const std::string& t = tokens_[static_cast<std::size_t>(i)];
    if (t.size() >= eow.size() && t.compare(t.size() - eow.size(), eow.size(), eow) == 0) {
      out += t.substr(0, t.size() - eow.size());
      out += ' ';
    } else {
      out += t;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

const std::string& BpeModel::token(int i) const {
  if (i < 0 || static_cast<std::size_t>(i) >= tokens_.size()) throw std::out_of_range("bpe: id " + std::to_string(i));
  return tokens_[static_cast<std::size_t>(i)];
}

int BpeModel::id(const std::string& t) const {
  auto it = ids_.find(t);
  return it == ids_.end() ? -1 : it->second;
}

nlohmann::json BpeModel::to_json() const {
  nlohmann::json j;
  j["merges"] = nlohmann::json::array();
  for (const auto& [a, b] : merges_) j["merges"].push_back({a, b});
  j["vocab"] = nlohmann::json::object();
  for (const auto& [t, i] : ids_) j["vocab"][t] = i;
  return j;
}

BpeModel BpeModel::from_json(const nlohmann::json& j) {
  BpeModel m;
  std::vector<std::string> tokens;
  try {
    const auto& vocab = j.at("vocab");
    tokens.resize(vocab.size());
    for (auto it = vocab.begin(); it != vocab.end(); ++it) {
      const int i = it.value().get<int>();
      if (i < 0 || static_cast<std::size_t>(i) >= tokens.size() || !tokens[static_cast<std::size_t>(i)].empty()) {
        throw std::invalid_argument("bpe model: vocab ids must be dense and unique (bad id for '" + it.key() + "')");
      }
      tokens[static_cast<std::size_t>(i)] = it.key();
    }
    for (const auto& p : j.at("merges")) m.merges_.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bpe model: ") + e.what());
  }
  if (tokens.size() < 4 || tokens[0] != "<pad>" || tokens[1] != "<unk>" || tokens[2] != "<bos>" || tokens[3] != "<eos>") {
    throw std::invalid_argument("bpe model: ids 0-3 must be <pad>, <unk>, <bos>, <eos>");
  }
  for (const auto& t : tokens) m.add_token(t);
  m.index_merges();
  return m;
}

void BpeModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json().dump(1) << "\n";
}

BpeModel BpeModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open bpe model " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace svq
