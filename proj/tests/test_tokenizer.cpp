#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "olens/rng.hpp"
#include "olens/tokenizer.hpp"

using namespace olens;

TEST_CASE("tokenize lowercases and splits on non-alphanumerics") {
  auto t = tokenize("Buy more icecream!!!");
  REQUIRE(t.size() == 3);
  CHECK(t[0] == "buy");
  CHECK(t[1] == "more");
  CHECK(t[2] == "icecream");
  CHECK(tokenize("").empty());
  CHECK(tokenize("  ,,  !").empty());
  auto u = tokenize("garden23 don't");
  REQUIRE(u.size() == 3);
  CHECK(u[0] == "garden23");
  CHECK(u[1] == "don");
  CHECK(u[2] == "t");
}

TEST_CASE("build_vocab frequency order with lexicographic ties") {
  Vocabulary v = build_vocab({"a b", "a"}, 10, 1);
  CHECK(v.size() == 7);
  CHECK(v.id_of("a") == 5);
  CHECK(v.id_of("b") == 6);

  Vocabulary tie = build_vocab({"b a"}, 10, 1);
  CHECK(tie.id_of("a") == 5);
  CHECK(tie.id_of("b") == 6);

  Vocabulary caps = build_vocab({"b a"}, 6, 1);  // room for one
  CHECK(caps.id_of("a") == 5);
  CHECK(caps.id_of("b") == kUnk);

  Vocabulary specials_only = build_vocab({"a b c"}, 5, 1);
  CHECK(specials_only.size() == 5);
  CHECK(specials_only.id_of("a") == kUnk);

  Vocabulary minf = build_vocab({"a a b"}, 10, 2);
  CHECK(minf.id_of("a") == 5);
  CHECK(minf.id_of("b") == kUnk);

  CHECK_THROWS_AS(build_vocab({}, 10, 1), Error);
  CHECK_THROWS_AS(build_vocab({"a"}, 4, 1), Error);
}

TEST_CASE("vocab determinism over identical corpus bytes") {
  std::vector<std::string> corpus = {"the cat sat", "the dog ran", "a cat ran fast"};
  Vocabulary v1 = build_vocab(corpus, 50, 1);
  Vocabulary v2 = build_vocab(corpus, 50, 1);
  REQUIRE(v1.size() == v2.size());
  for (int i = 0; i < v1.size(); ++i) CHECK(v1.token_of(i) == v2.token_of(i));
}

TEST_CASE("encode structure") {
  Vocabulary v = build_vocab({"alpha beta gamma"}, 20, 1);

  SUBCASE("empty text") {
    auto s = encode("", v, 128);
    REQUIRE(s.ids.size() == 128);
    CHECK(s.ids[0] == kCls);
    CHECK(s.ids[1] == kSep);
    CHECK(s.ids[2] == kPad);
    CHECK(s.attention_mask[0] == 1);
    CHECK(s.attention_mask[1] == 1);
    CHECK(s.attention_mask[2] == 0);
    CHECK(s.real_length() == 2);
  }

  SUBCASE("oov becomes UNK") {
    auto s = encode("Buy more icecream!!!", v, 16);
    CHECK(s.ids[0] == kCls);
    CHECK(s.ids[1] == kUnk);
    CHECK(s.ids[2] == kUnk);
    CHECK(s.ids[3] == kUnk);
    CHECK(s.ids[4] == kSep);
  }

  SUBCASE("truncation keeps CLS and SEP") {
    std::string text;
    for (int i = 0; i < 200; ++i) text += "alpha ";
    auto s = encode(text, v, 128);
    REQUIRE(s.ids.size() == 128);
    CHECK(s.ids[0] == kCls);
    CHECK(s.ids[127] == kSep);
    CHECK(s.real_length() == 128);
    for (int i = 1; i < 127; ++i) CHECK(s.ids[i] == v.id_of("alpha"));
  }

  SUBCASE("segment ids are all zero") {
    auto s = encode("alpha beta", v, 8);
    for (int x : s.segment_ids) CHECK(x == 0);
  }

  SUBCASE("invariants over random strings") {
    RngStream rng(11);
    const char* words[] = {"alpha", "beta", "gamma", "zzz", "!!", "Mixed-Case", "a1"};
    for (int trial = 0; trial < 50; ++trial) {
      std::string text;
      int n = static_cast<int>(rng.next_below(40));
      for (int i = 0; i < n; ++i) {
        text += words[rng.next_below(7)];
        text += ' ';
      }
      auto s = encode(text, v, 32);
      REQUIRE(s.ids.size() == 32);
      REQUIRE(s.attention_mask.size() == 32);
      CHECK(s.ids[0] == kCls);
      int real = s.real_length();
      CHECK(s.ids[real - 1] == kSep);
      for (int i = 0; i < 32; ++i) {
        if (s.attention_mask[i] == 0) CHECK(s.ids[i] == kPad);
        if (i < real) CHECK(s.attention_mask[i] == 1);
      }
    }
  }
}

TEST_CASE("decode") {
  Vocabulary v = build_vocab({"alpha beta gamma"}, 20, 1);
  SUBCASE("round-trips in-vocab text") {
    auto s = encode("Alpha beta!", v, 16);
    CHECK(decode(s.ids, v) == "alpha beta");
  }
  SUBCASE("all PAD decodes to empty") { CHECK(decode({kPad, kPad}, v) == ""); }
  SUBCASE("specials omitted") { CHECK(decode({kCls, 5, kSep}, v) == v.token_of(5)); }
  SUBCASE("out of range id") { CHECK_THROWS_AS(decode({v.size()}, v), Error); }
}

TEST_CASE("vocab file round-trip") {
  Vocabulary v = build_vocab({"the cat sat on the mat"}, 30, 1);
  const std::string path = "/tmp/olens_vocab_test.tsv";
  save_vocab(path, v);
  Vocabulary r = load_vocab(path);
  REQUIRE(r.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(r.token_of(i) == v.token_of(i));

  SUBCASE("rejects non-dense ids") {
    std::ofstream f(path);
    f << "[PAD]\t0\n[UNK]\t1\n[CLS]\t2\n[SEP]\t3\n[MASK]\t4\nfoo\t7\n";
    f.close();
    CHECK_THROWS_AS(load_vocab(path), Error);
  }
  SUBCASE("rejects wrong specials") {
    std::ofstream f(path);
    f << "[XXX]\t0\n";
    f.close();
    CHECK_THROWS_AS(load_vocab(path), Error);
  }
  std::remove(path.c_str());
}
