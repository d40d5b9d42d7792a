// Copyright 2026 The sidrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sidrec/embed.hpp"

using namespace sidrec;

namespace {

// Independent re-derivation of the local signed-hash embedding: FNV-1a over
// the little-endian seed bytes gives the hash state, each lowercased token is
// hashed from that state, bucket = h % dim, sign from bit 32, then L2
// normalization. Constants are written out literally on purpose.
uint64_t oracle_fnv(const std::string& s, uint64_t state) {
  for (unsigned char c : s) {
    state ^= c;
    state *= 0x100000001b3ull;
  }
  return state;
}

std::vector<double> oracle_embed(const std::vector<std::string>& tokens, uint64_t seed,
                                 int dim) {
  std::string seed_bytes(8, '\0');
  for (int i = 0; i < 8; ++i) {
    seed_bytes[i] = static_cast<char>((seed >> (8 * i)) & 0xff);
  }
  const uint64_t state = oracle_fnv(seed_bytes, 0xcbf29ce484222325ull);
  std::vector<double> v(dim, 0.0);
  for (const auto& tok : tokens) {
    const uint64_t h = oracle_fnv(tok, state);
    const int bucket = static_cast<int>(h % static_cast<uint64_t>(dim));
    const double sign = ((h >> 32) & 1ull) ? 1.0 : -1.0;
    v[bucket] += sign;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

double vec_norm(const EmbeddingVector& v) {
  double s = 0.0;
  for (double x : v.values) s += x * x;
  return std::sqrt(s);
}

// Counts how many times embed() is invoked, for cache behavior checks.
class CountingEmbedder final : public Embedder {
 public:
  explicit CountingEmbedder(int dim) : inner_(dim, 0) {}
  int dim() const override { return inner_.dim(); }
  std::string id() const override { return "counting"; }
  EmbeddingVector embed(const std::string& text) override {
    ++calls;
    return inner_.embed(text);
  }
  int calls = 0;

 private:
  LocalEmbedder inner_;
};

}  // namespace

TEST_CASE("local embedder: deterministic and dimension-correct") {
  LocalEmbedder e(64, 0);
  auto a = e.embed("trail running shoes");
  auto b = e.embed("trail running shoes");
  REQUIRE(a.values.size() == 64);
  CHECK(a.normalized);
  CHECK(a.values == b.values);
}

TEST_CASE("local embedder: bag of tokens ignores order, case, punctuation") {
  LocalEmbedder e(32, 5);
  auto a = e.embed("alpha beta gamma");
  auto b = e.embed("gamma  ALPHA, beta!");
  CHECK(a.values == b.values);
  // Token multiplicity matters.
  auto c = e.embed("alpha alpha beta gamma");
  CHECK(a.values != c.values);
}

TEST_CASE("local embedder: matches the hand hash oracle") {
  const uint64_t seed = 11;
  const int dim = 16;
  LocalEmbedder e(dim, seed);

  auto ab = e.embed("a b");
  auto ab_oracle = oracle_embed({"a", "b"}, seed, dim);
  REQUIRE(ab.values.size() == ab_oracle.size());
  for (int i = 0; i < dim; ++i) {
    CHECK(ab.values[i] == Catch::Approx(ab_oracle[i]).margin(1e-12));
  }

  auto ac = e.embed("a c");
  auto ac_oracle = oracle_embed({"a", "c"}, seed, dim);
  for (int i = 0; i < dim; ++i) {
    CHECK(ac.values[i] == Catch::Approx(ac_oracle[i]).margin(1e-12));
  }

  CHECK(cosine(ab, ac) < 1.0);
}

TEST_CASE("local embedder: different seeds give different vectors") {
  LocalEmbedder a(64, 1), b(64, 2);
  CHECK(a.embed("juniper linen lotus").values != b.embed("juniper linen lotus").values);
}

TEST_CASE("local embedder: emitted vectors are unit norm within 1e-6") {
  LocalEmbedder e(64, 3);
  for (const char* text :
       {"x", "one two three", "repeat repeat repeat repeat", "topic-4 cedar copper coral"}) {
    auto v = e.embed(text);
    CHECK(std::abs(vec_norm(v) - 1.0) < 1e-6);
  }
}

TEST_CASE("local embedder: contract errors") {
  CHECK_THROWS_AS(LocalEmbedder(4, 0), Error);  // dim below minimum
  LocalEmbedder e(16, 0);
  CHECK_THROWS_AS(e.embed(""), Error);
  CHECK_THROWS_AS(e.embed("!!! ???"), Error);  // no tokens survive
}

TEST_CASE("cosine: closed forms, symmetry, bounds") {
  EmbeddingVector v{{1.0, 0.0}, false};
  EmbeddingVector w{{1.0, 1.0}, false};
  EmbeddingVector x{{0.0, 1.0}, false};
  CHECK(cosine(v, v) == Catch::Approx(1.0).margin(1e-12));
  CHECK(cosine(v, x) == Catch::Approx(0.0).margin(1e-12));
  CHECK(cosine(v, w) == Catch::Approx(0.7071).margin(1e-4));
  CHECK(cosine(v, w) == Catch::Approx(cosine(w, v)).margin(1e-15));

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingVector a, b;
    for (int i = 0; i < 8; ++i) {
      a.values.push_back(rng.next_normal());
      b.values.push_back(rng.next_normal());
    }
    double c = cosine(a, b);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("cosine: zero norm and dimension mismatch are contract errors") {
  EmbeddingVector z{{0.0, 0.0}, false};
  EmbeddingVector v{{1.0, 0.0}, false};
  EmbeddingVector three{{1.0, 0.0, 0.0}, false};
  CHECK_THROWS_AS(cosine(z, v), Error);
  CHECK_THROWS_AS(cosine(v, three), Error);
}

TEST_CASE("deep_item_embedding: canonical order concat with '; ' separator") {
  LocalEmbedder e(64, 0);
  AggregatedInterests agg;
  agg.item_id = "item-0001";
  Interest i1{"espresso brewing ritual", 1.0, {"m1", "m2"}, 1};
  Interest i2{"kitchen counter aesthetics", 0.6, {"m1"}, 1};
  agg.interests = {i1, i2};
  agg.J = 2;

  auto deep = deep_item_embedding(e, agg);
  auto manual = e.embed("espresso brewing ritual; kitchen counter aesthetics");
  CHECK(deep.values == manual.values);

  AggregatedInterests single;
  single.item_id = "item-0002";
  single.interests = {i1};
  single.J = 1;
  CHECK(deep_item_embedding(e, single).values ==
        e.embed("espresso brewing ritual").values);

  AggregatedInterests empty;
  empty.item_id = "item-0003";
  CHECK_THROWS_AS(deep_item_embedding(e, empty), Error);
}

TEST_CASE("shallow_item_embedding uses title and description text") {
  LocalEmbedder e(64, 0);
  ItemMeta m;
  m.item_id = "item-0001";
  m.title = "topic-2 cedar copper";
  m.description = "A cedar product.";
  auto shallow = shallow_item_embedding(e, m);
  CHECK(shallow.values == e.embed("topic-2 cedar copper A cedar product.").values);
}

TEST_CASE("embedding cache: round trip and hit behavior") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "sidrec_test_cache.jsonl";
  fs::remove(path);

  EmbeddingCache cache;
  CountingEmbedder counting(16);
  CachingEmbedder cached(counting, cache);

  auto a = cached.embed("first text");
  auto b = cached.embed("first text");
  CHECK(counting.calls == 1);
  CHECK(a.values == b.values);
  cached.embed("second text");
  CHECK(counting.calls == 2);

  cache.save(path);
  EmbeddingCache reloaded;
  reloaded.load(path);
  CHECK(reloaded.size() == 2);

  CountingEmbedder counting2(16);
  CachingEmbedder cached2(counting2, reloaded);
  auto c = cached2.embed("first text");
  CHECK(counting2.calls == 0);
  for (size_t i = 0; i < a.values.size(); ++i) {
    CHECK(c.values[i] == Catch::Approx(a.values[i]).margin(1e-9));
  }
  fs::remove(path);
}
