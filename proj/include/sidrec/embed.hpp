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
//
// Text embeddings: a deterministic local signed-hash bag-of-tokens provider
// for offline runs, cosine similarity, shallow/deep item embeddings, and a
// file-backed embedding cache.

#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/corpus.hpp"
#include "sidrec/interests.hpp"
#include "sidrec/jsonl.hpp"

namespace sidrec {

struct EmbeddingVector {
  std::vector<double> values;
  bool normalized = false;
};

inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  require(a.values.size() == b.values.size(), ErrorKind::contract,
          "dot: dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

inline double norm(const EmbeddingVector& v) {
  double s = 0.0;
  for (double x : v.values) s += x * x;
  return std::sqrt(s);
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  require(a.values.size() == b.values.size(), ErrorKind::contract,
          "cosine: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  require(na > 0.0 && nb > 0.0, ErrorKind::contract, "cosine: zero-norm input");
  const double c = dot(a, b) / (na * nb);
  return std::min(1.0, std::max(-1.0, c));
}

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;  // namespaces cache keys
  virtual EmbeddingVector embed(const std::string& text) = 0;
};

// Signed-hash bag of tokens: each lowercased token is FNV-hashed from a
// seed-derived state, lands in bucket h % dim with sign from bit 32, and the
// signed counts are L2-normalized. Depends only on (token multiset, seed, dim).
class LocalEmbedder final : public Embedder {
 public:
  explicit LocalEmbedder(int dim = 64, uint64_t seed = 0) : dim_(dim), seed_(seed) {
    require(dim >= 8, ErrorKind::config, "local embedder dim must be >= 8");
    std::string seed_bytes(8, '\0');
    for (int i = 0; i < 8; ++i) {
      seed_bytes[i] = static_cast<char>((seed >> (8 * i)) & 0xff);
    }
    state_ = fnv1a64(seed_bytes);
  }

  int dim() const override { return dim_; }

  std::string id() const override {
    return "local-d" + std::to_string(dim_) + "-s" + std::to_string(seed_);
  }

  EmbeddingVector embed(const std::string& text) override {
    require(!text.empty(), ErrorKind::contract, "embed_text: empty text");
    const auto tokens = tokenize(text);
    require(!tokens.empty(), ErrorKind::contract,
            "embed_text: no tokens in \"" + text + "\"");
    EmbeddingVector v;
    v.values.assign(static_cast<size_t>(dim_), 0.0);
    for (const auto& tok : tokens) {
      const uint64_t h = fnv1a64(tok, state_);
      const size_t bucket = static_cast<size_t>(h % static_cast<uint64_t>(dim_));
      v.values[bucket] += ((h >> 32) & 1ull) ? 1.0 : -1.0;
    }
    double n = norm(v);
    if (n <= 0.0) {
      // Signed counts cancelled exactly; fall back to unsigned counts, which
      // is still a pure function of the token multiset and cannot vanish.
      for (const auto& tok : tokens) {
        const uint64_t h = fnv1a64(tok, state_);
        v.values[static_cast<size_t>(h % static_cast<uint64_t>(dim_))] += 1.0;
      }
      n = norm(v);
    }
    for (double& x : v.values) x /= n;
    v.normalized = true;
    return v;
  }

 private:
  int dim_;
  uint64_t seed_;
  uint64_t state_;
};

// Interests joined in their canonical aggregated order with "; ".
inline std::string concat_interest_texts(const AggregatedInterests& agg) {
  std::string out;
  for (size_t i = 0; i < agg.interests.size(); ++i) {
    if (i > 0) out += "; ";
    out += agg.interests[i].text;
  }
  return out;
}

inline EmbeddingVector deep_item_embedding(Embedder& embedder,
                                           const AggregatedInterests& agg) {
  require(!agg.interests.empty(), ErrorKind::contract,
          "deep_item_embedding: no interests for item " + agg.item_id);
  return embedder.embed(concat_interest_texts(agg));
}

inline EmbeddingVector shallow_item_embedding(Embedder& embedder, const ItemMeta& meta) {
  require(!meta.title.empty(), ErrorKind::contract,
          "shallow_item_embedding: empty title for item " + meta.item_id);
  std::string text = meta.title;
  if (!meta.description.empty()) text += " " + meta.description;
  return embedder.embed(text);
}

// ---- Cache ----------------------------------------------------------------

class EmbeddingCache {
 public:
  static std::string key(const std::string& provider_id, const std::string& text) {
    return hex64(fnv1a64(text, fnv1a64("\x1f", fnv1a64(provider_id))));
  }

  void load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return;
    for (const auto& j : read_jsonl_file(path)) {
      EmbeddingVector v;
      v.values = j.at("values").get<std::vector<double>>();
      v.normalized = true;
      map_[j.at("key").get<std::string>()] = std::move(v);
    }
  }

  void save(const std::filesystem::path& path) const {
    std::vector<Json> records;
    records.reserve(map_.size());
    for (const auto& [k, v] : map_) {
      records.push_back(Json{{"key", k}, {"values", v.values}});
    }
    write_jsonl_file(path, records);
  }

  const EmbeddingVector* find(const std::string& k) const {
    auto it = map_.find(k);
    return it == map_.end() ? nullptr : &it->second;
  }

  void put(const std::string& k, EmbeddingVector v) { map_[k] = std::move(v); }

  size_t size() const { return map_.size(); }

 private:
  std::map<std::string, EmbeddingVector> map_;  // ordered for stable saves
};

// Wraps an embedder so repeated texts hit the cache instead of the provider.
// Thread-safe: mining workers may embed concurrently.
class CachingEmbedder final : public Embedder {
 public:
  CachingEmbedder(Embedder& inner, EmbeddingCache& cache)
      : inner_(inner), cache_(cache) {}

  int dim() const override { return inner_.dim(); }
  std::string id() const override { return inner_.id(); }

  EmbeddingVector embed(const std::string& text) override {
    const std::string k = EmbeddingCache::key(inner_.id(), text);
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (const EmbeddingVector* hit = cache_.find(k)) return *hit;
    }
    EmbeddingVector v = inner_.embed(text);
    std::lock_guard<std::mutex> lock(mu_);
    cache_.put(k, v);
    return v;
  }

 private:
  Embedder& inner_;
  EmbeddingCache& cache_;
  std::mutex mu_;
};

}  // namespace sidrec
