#include <doctest.h>

#include <filesystem>
#include <set>

#include "svq/pose/synth.hpp"
#include "svq/text/bpe.hpp"

using namespace svq;

TEST_CASE("bpe: first merge on a toy corpus") {
  // alphabet {a, a</w>, b, b</w>}; pairs in "a a a b</w>": (a,a) x2, (a,b</w>) x1
  const std::vector<std::string> corpus(5, "aaab");
  const BpeModel m = BpeModel::train(corpus, 4 + 4 + 1);
  REQUIRE(m.merges().size() == 1);
  CHECK(m.merges()[0] == std::pair<std::string, std::string>{"a", "a"});
  CHECK(m.size() == 9);
  CHECK(m.decode(m.encode("aaab")) == "aaab");
  CHECK(m.encode("aaab").size() == 3);  // aa a b</w>
}

TEST_CASE("bpe: ties break lexicographically") {
  // "ab" and "cd" each contribute one pair with equal counts.
  const BpeModel m = BpeModel::train({"cd ab"}, 8 + 4 + 1);
  REQUIRE(m.merges().size() == 1);
  CHECK(m.merges()[0].first == "a");
}

TEST_CASE("bpe: character model, determinism, specials") {
  const std::vector<std::string> corpus = {"hello world", "Hello there", "low lower lowest"};
  std::set<std::string> chars;
  for (const auto& t : corpus)
    for (const auto& w : split_words(lowercase(t)))
      for (const auto& c : utf8_chars(w)) chars.insert(c);
  const std::size_t alphabet = 2 * chars.size();
  const BpeModel plain = BpeModel::train(corpus, alphabet + 4);
  CHECK(plain.merges().empty());
  CHECK_THROWS_AS(BpeModel::train(corpus, alphabet + 3), std::invalid_argument);
  CHECK_THROWS_AS(BpeModel::train({}, 100), std::invalid_argument);
  CHECK_THROWS_AS(BpeModel::train({"   "}, 100), std::invalid_argument);

  const BpeModel a = BpeModel::train(corpus, 60), b = BpeModel::train(corpus, 60);
  CHECK(a.merges() == b.merges());
  CHECK(a.token(0) == "<pad>");
  CHECK(a.token(1) == "<unk>");
  CHECK(a.token(2) == "<bos>");
  CHECK(a.token(3) == "<eos>");
  CHECK(a.decode(a.encode("Hello")) == "hello");
  CHECK(a.decode(a.encode("  lowest   world ")) == "lowest world");
  for (int id : a.encode("hello lower")) CHECK(id > 3);
  for (int id : a.encode("qqq zz")) CHECK(id == BpeModel::unk);
  CHECK(a.encode("qqq zz").size() == 5);
  CHECK_THROWS_AS(a.decode({static_cast<int>(a.size())}), std::out_of_range);
  CHECK(a.decode({BpeModel::bos, a.encode("world")[0], BpeModel::eos, BpeModel::pad}) == a.decode({a.encode("world")[0]}));

  // token count <= chars + 1 per word
  for (const auto& t : corpus) {
    std::size_t budget = 0;
    for (const auto& w : split_words(t)) budget += utf8_chars(w).size() + 1;
    CHECK(a.encode(t).size() <= budget);
  }
}

TEST_CASE("bpe: json round trip and synthetic corpus round trip") {
  const auto rules = make_rules(10, 16, 3);
  SynthOptions o;
  o.n_sentences = 300;
  o.jitter = 0.0;
  o.placement = false;
  std::vector<std::string> texts;
  for (const auto& s : synth_corpus(rules, o)) texts.push_back(s.text);
  const BpeModel m = BpeModel::train(texts, 512);
  for (const auto& t : texts) CHECK(m.decode(m.encode(t)) == t);

  const auto path = std::filesystem::temp_directory_path() / "svq_bpe_test.json";
  m.save(path.string());
  const BpeModel back = BpeModel::load(path.string());
  std::filesystem::remove(path);
  CHECK(back.merges() == m.merges());
  CHECK(back.size() == m.size());
  for (const auto& t : texts) CHECK(back.encode(t) == m.encode(t));
  nlohmann::json bad = m.to_json();
  bad["vocab"]["<pad>"] = 7;
  CHECK_THROWS_AS(BpeModel::from_json(bad), std::invalid_argument);
}
