#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "ctxsense/error.hpp"
#include "ctxsense/vecstore.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxsense;
using ctxsense::testing::TempFile;

TEST_CASE("load_vectors reads the header and rows") {
  TempFile f("3 4\nbank 1 0 0 0\nriver 0 1 0 0\nmoney 0 0 1 0.5\n");
  auto store = load_vectors(f.path());
  CHECK(store.size() == 3);
  CHECK(store.dim() == 4);
  REQUIRE(store.find("money"));
  CHECK((*store.find("money"))[3] == 0.5);
  CHECK(store.find("mone") == nullptr);
}

TEST_CASE("load_vectors rejects malformed input with a line number") {
  SUBCASE("short row") {
    try {
      parse_vectors("2 4\na 1 0 0 0\nb 1 2 3\n");
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("duplicate label") {
    try {
      parse_vectors("2 2\nbank 1 0\nbank 0 1\n");
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
    }
  }
  SUBCASE("non-finite value") {
    try {
      parse_vectors("1 2\na nan 1\n");
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("zero vector") { CHECK_THROWS_AS(parse_vectors("1 2\na 0 0\n"), LoadError); }
  SUBCASE("bad header") {
    CHECK_THROWS_AS(parse_vectors("three 4\n"), LoadError);
    CHECK_THROWS_AS(parse_vectors("3\n"), LoadError);
    CHECK_THROWS_AS(parse_vectors(""), LoadError);
  }
  SUBCASE("row count differs from header") {
    CHECK_THROWS_AS(parse_vectors("2 2\na 1 0\n"), LoadError);
  }
}

TEST_CASE("save then load reproduces every value bit for bit") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<int> e(-30, 30);
  VectorStore store(6);
  for (int r = 0; r < 200; ++r) {
    Vec v(6);
    for (auto& x : v) x = std::ldexp(u(gen), e(gen));
    store.add("w" + std::to_string(r), v);
  }
  TempFile f("");
  store.save(f.path());
  auto back = load_vectors(f.path());
  REQUIRE(back.size() == store.size());
  for (std::size_t r = 0; r < store.size(); ++r) {
    CHECK(back.labels()[r] == store.labels()[r]);
    CHECK(std::memcmp(back.vector_at(r).data(), store.vector_at(r).data(), 6 * sizeof(double)) ==
          0);
  }
}

TEST_CASE("sense inventory groups base#sense rows") {
  auto store = parse_vectors("4 2\nmac#macbook 1 0\nmac#mcdonalds 0 1\nate 1 1\nmac 3 3\n");

  SUBCASE("derived from the store") {
    auto inv = build_inventory(store);
    REQUIRE(inv.contains("mac"));
    CHECK(inv.senses("mac").size() == 2);
    CHECK(inv.senses("mac")[0].id == "macbook");
    CHECK(inv.ambiguous("mac"));
    CHECK(inv.senses("ate").size() == 1);
    CHECK(inv.senses("ate")[0].id.empty());
  }
  SUBCASE("declared rows") {
    TempFile decl("mac#mcdonalds\nmac#macbook\n");
    auto inv = load_sense_inventory(decl.path(), store);
    REQUIRE(inv.senses("mac").size() == 2);
    CHECK(inv.senses("mac")[0].id == "mcdonalds");
  }
  SUBCASE("declared row without a vector") {
    try {
      build_inventory(store, "mac#macbook\nmac#store\n");
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("mac#store") != std::string::npos);
    }
  }
  SUBCASE("empty sense id") {
    auto odd = parse_vectors("1 2\nmac# 1 0\n");
    CHECK_THROWS_AS(build_inventory(odd), LoadError);
  }
}

TEST_CASE("plain store gives single-sense labels") {
  auto inv = build_inventory(parse_vectors("2 2\na 1 0\nb 0 1\n"));
  for (const auto& [label, senses] : inv.entries()) {
    CHECK(senses.size() == 1);
    CHECK_FALSE(inv.ambiguous(label));
  }
}

TEST_CASE("without_sense removes exactly one sense") {
  auto inv = build_inventory(parse_vectors("3 2\nmac#a 1 0\nmac#b 0 1\nmac#c 1 1\n"));
  auto cut = inv.without_sense("mac", "b");
  REQUIRE(cut.senses("mac").size() == 2);
  CHECK(cut.find_sense("mac", "b") == nullptr);
  CHECK_THROWS(cut.without_sense("mac", "b"));
  auto single = build_inventory(parse_vectors("1 2\nx 1 0\n"));
  CHECK_THROWS(single.without_sense("x", ""));
}

TEST_CASE("utterance_mean") {
  auto inv = build_inventory(
      parse_vectors("5 2\nw 0.1 0.7\nx 1 0\ny 0 1\nmac#a 2 0\nmac#b 0 2\n"));
  using Tokens = std::vector<std::string>;

  CHECK(utterance_mean(Tokens{"w"}, inv) == Vec{0.1, 0.7});
  CHECK(utterance_mean(Tokens{"x", "y"}, inv) == Vec{0.5, 0.5});
  CHECK(utterance_mean(Tokens{"x", "unknown"}, inv) == Vec{1.0, 0.0});
  CHECK(utterance_mean(Tokens{"mac"}, inv) == Vec{1.0, 1.0});
  CHECK_THROWS_AS(utterance_mean(Tokens{"nope", "nada"}, inv), EmptyUtteranceError);
  CHECK_THROWS_AS(utterance_mean(Tokens{}, inv), EmptyUtteranceError);

  SUBCASE("k copies of one token give its vector exactly") {
    for (std::size_t k = 1; k < 40; ++k) CHECK(utterance_mean(Tokens(k, "w"), inv) == Vec{0.1, 0.7});
  }
  SUBCASE("order does not matter") {
    std::mt19937_64 gen(3);
    Tokens base{"w", "x", "y", "mac", "w", "unknown", "x", "w"};
    const Vec expected = utterance_mean(base, inv);
    for (int i = 0; i < 200; ++i) {
      std::shuffle(base.begin(), base.end(), gen);
      CHECK(utterance_mean(base, inv) == expected);
    }
  }
}
