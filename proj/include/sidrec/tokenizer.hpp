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
// Semantic-ID tokenizer: residual k-means codebooks over item embeddings,
// hierarchical SID assignment with collision disambiguators, reconstruction,
// and a prefix trie over the assigned SIDs for constrained decoding.

#ifndef SIDREC_TOKENIZER_HPP
#define SIDREC_TOKENIZER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/embed.hpp"
#include "sidrec/jsonl.hpp"

namespace sidrec {

struct TrainCfg {
  int max_iters = 100;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct Codebooks {
  int H = 0;
  int K = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  // centroids[h][k] is the dim-length centroid vector for level h, entry k.
  std::vector<std::vector<std::vector<double>>> centroids;
  // residual_energy[0] is the mean squared norm of the training embeddings;
  // residual_energy[h] is the mean squared residual norm after level h.
  std::vector<double> residual_energy;
};

struct SID {
  std::vector<int> codes;
  int disambiguator = -1;  // -1 means "no collision, no disambiguator"

  bool has_disambiguator() const { return disambiguator >= 0; }

  // Trie/bijection key: codes followed by the disambiguator when present.
  std::vector<int> full_path() const {
    std::vector<int> path = codes;
    if (has_disambiguator()) {
      path.push_back(disambiguator);
    }
    return path;
  }

  friend bool operator==(const SID& a, const SID& b) {
    return a.codes == b.codes && a.disambiguator == b.disambiguator;
  }
};

struct SidTable {
  int H = 0;
  std::map<std::string, SID> by_item;
  std::map<std::vector<int>, std::string> by_path;

  // Highest disambiguator value in use, or -1 when every SID is collision-free.
  int max_disambiguator() const {
    int best = -1;
    for (const auto& [item, sid] : by_item) {
      best = std::max(best, sid.disambiguator);
    }
    return best;
  }
};

namespace detail {

inline double dist2(const std::vector<double>& a, const std::vector<double>& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  return total;
}

inline std::size_t nearest_centroid(const std::vector<std::vector<double>>& centroids,
                                    const std::vector<double>& point) {
  std::size_t best = 0;
  double best_d = dist2(point, centroids[0]);
  for (std::size_t k = 1; k < centroids.size(); ++k) {
    const double d = dist2(point, centroids[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;  // ties keep the lowest index by construction
}

// Seeded k-means++ initialization (D^2 sampling); duplicates are possible when
// there are fewer distinct points than centroids, and are handled by the
// empty-cluster reseeding during Lloyd iterations.
inline std::vector<std::vector<double>> kmeanspp_init(
    const std::vector<std::vector<double>>& points, int k, Rng& rng) {
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  centroids.push_back(points[rng.next_below(points.size())]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    d2[i] = dist2(points[i], centroids[0]);
  }
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (double d : d2) {
      total += d;
    }
    std::size_t pick = total > 0.0 ? rng.next_weighted(d2)
                                   : static_cast<std::size_t>(rng.next_below(points.size()));
    centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], dist2(points[i], centroids.back()));
    }
  }
  return centroids;
}

// Lloyd's algorithm to an assignment fixpoint (or max_iters). The assignment
// step may run on several threads; the centroid update accumulates in point
// order on one thread so results do not depend on the thread count.
inline std::vector<std::vector<double>> lloyd_kmeans(
    const std::vector<std::vector<double>>& points, int k, const TrainCfg& cfg,
    Rng& rng, std::vector<std::size_t>& assignment) {
  auto centroids = kmeanspp_init(points, k, rng);
  const std::size_t dim = points[0].size();
  assignment.assign(points.size(), 0);
  std::vector<std::size_t> previous(points.size(), points.size());

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    parallel_for(points.size(), cfg.threads, [&](std::size_t i) {
      assignment[i] = nearest_centroid(centroids, points[i]);
    });
    if (assignment == previous) {
      break;
    }
    previous = assignment;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const std::size_t c = assignment[i];
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) {
        sums[c][d] += points[i][d];
      }
    }
    std::vector<bool> reserved(points.size(), false);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (std::size_t d = 0; d < dim; ++d) {
          centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
        }
        continue;
      }
      // Empty cluster: reseed from the point farthest from its own centroid.
      // When every point already sits on a centroid there is nothing to gain,
      // so the stale centroid is kept and the cluster stays empty.
      std::size_t far_point = points.size();
      double far_d = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (reserved[i]) {
          continue;
        }
        const double d = dist2(points[i], centroids[assignment[i]]);
        if (d > far_d) {
          far_d = d;
          far_point = i;
        }
      }
      if (far_point < points.size()) {
        centroids[c] = points[far_point];
        reserved[far_point] = true;
      }
    }
  }
  return centroids;
}

}  // namespace detail

inline Codebooks train_codebooks(const std::vector<EmbeddingVector>& embeddings, int H,
                                 int K, const TrainCfg& cfg = {}) {
  require(H >= 1, ErrorKind::config, "train_codebooks: H must be at least 1");
  require(K >= 1, ErrorKind::config, "train_codebooks: K must be at least 1");
  require(!embeddings.empty(), ErrorKind::training, "train_codebooks: no embeddings");
  require(embeddings.size() >= static_cast<std::size_t>(K), ErrorKind::training,
          "train_codebooks: need at least K=" + std::to_string(K) + " embeddings, got " +
              std::to_string(embeddings.size()));
  const std::size_t dim = embeddings[0].values.size();
  for (const auto& e : embeddings) {
    require(e.values.size() == dim, ErrorKind::contract,
            "train_codebooks: inconsistent embedding dimensions");
    for (double v : e.values) {
      require(std::isfinite(v), ErrorKind::contract,
              "train_codebooks: non-finite value in input embeddings");
    }
  }

  Codebooks cb;
  cb.H = H;
  cb.K = K;
  cb.dim = static_cast<int>(dim);
  cb.seed = cfg.seed;
  cb.centroids.resize(H);
  cb.residual_energy.resize(H + 1);

  std::vector<std::vector<double>> residuals(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    residuals[i] = embeddings[i].values;
  }
  auto mean_energy = [&residuals] {
    double total = 0.0;
    for (const auto& r : residuals) {
      for (double v : r) {
        total += v * v;
      }
    }
    return total / static_cast<double>(residuals.size());
  };
  cb.residual_energy[0] = mean_energy();

  Rng rng(cfg.seed);
  for (int h = 0; h < H; ++h) {
    std::vector<std::size_t> assignment;
    cb.centroids[h] = detail::lloyd_kmeans(residuals, K, cfg, rng, assignment);
    for (std::size_t i = 0; i < residuals.size(); ++i) {
      const auto& c = cb.centroids[h][assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) {
        residuals[i][d] -= c[d];
      }
    }
    cb.residual_energy[h + 1] = mean_energy();
  }
  return cb;
}

struct QuantizeTrace {
  SID sid;
  // Residual after subtracting the sum of the chosen centroids from the input;
  // shares the accumulation order of reconstruct() so that the reconstruction
  // error matches final_residual_norm() without tolerance.
  std::vector<double> final_residual;
  std::vector<double> level_residual_norms;  // one entry per level, after it

  double final_residual_norm() const { return level_residual_norms.back(); }
};

inline QuantizeTrace quantize_trace(const Codebooks& cb, const EmbeddingVector& v) {
  require(static_cast<int>(v.values.size()) == cb.dim, ErrorKind::contract,
          "quantize: embedding dim " + std::to_string(v.values.size()) +
              " does not match codebook dim " + std::to_string(cb.dim));
  QuantizeTrace trace;
  trace.sid.codes.reserve(cb.H);
  std::vector<double> acc(cb.dim, 0.0);  // sum of chosen centroids so far
  std::vector<double> residual(cb.dim);
  for (int h = 0; h < cb.H; ++h) {
    for (int d = 0; d < cb.dim; ++d) {
      residual[d] = v.values[d] - acc[d];
    }
    const std::size_t code = detail::nearest_centroid(cb.centroids[h], residual);
    trace.sid.codes.push_back(static_cast<int>(code));
    const auto& c = cb.centroids[h][code];
    for (int d = 0; d < cb.dim; ++d) {
      acc[d] += c[d];
    }
    double energy = 0.0;
    for (int d = 0; d < cb.dim; ++d) {
      const double r = v.values[d] - acc[d];
      energy += r * r;
    }
    trace.level_residual_norms.push_back(std::sqrt(energy));
  }
  trace.final_residual.resize(cb.dim);
  for (int d = 0; d < cb.dim; ++d) {
    trace.final_residual[d] = v.values[d] - acc[d];
  }
  return trace;
}

inline SID quantize(const Codebooks& cb, const EmbeddingVector& v) {
  return quantize_trace(cb, v).sid;
}

inline EmbeddingVector reconstruct(const Codebooks& cb, const SID& s) {
  require(static_cast<int>(s.codes.size()) == cb.H, ErrorKind::contract,
          "reconstruct: SID has " + std::to_string(s.codes.size()) +
              " codes, codebooks have " + std::to_string(cb.H) + " levels");
  EmbeddingVector out;
  out.values.assign(cb.dim, 0.0);
  out.normalized = false;
  for (int h = 0; h < cb.H; ++h) {
    require(s.codes[h] >= 0 && s.codes[h] < cb.K, ErrorKind::contract,
            "reconstruct: code " + std::to_string(s.codes[h]) + " at level " +
                std::to_string(h + 1) + " is outside [0, " + std::to_string(cb.K) + ")");
    const auto& c = cb.centroids[h][s.codes[h]];
    for (int d = 0; d < cb.dim; ++d) {
      out.values[d] += c[d];
    }
  }
  return out;
}

inline SidTable assign_sids(const Codebooks& cb,
                            const std::map<std::string, EmbeddingVector>& items) {
  require(!items.empty(), ErrorKind::contract, "assign_sids: no items");
  SidTable table;
  table.H = cb.H;
  // Group colliding items; std::map iteration gives ascending item_id order,
  // which fixes the disambiguator numbering.
  std::map<std::vector<int>, std::vector<std::string>> groups;
  for (const auto& [item, emb] : items) {
    SID sid = quantize(cb, emb);
    groups[sid.codes].push_back(item);
    table.by_item.emplace(item, std::move(sid));
  }
  for (const auto& [codes, members] : groups) {
    if (members.size() > 1) {
      for (std::size_t i = 0; i < members.size(); ++i) {
        table.by_item[members[i]].disambiguator = static_cast<int>(i);
      }
    }
  }
  for (const auto& [item, sid] : table.by_item) {
    table.by_path.emplace(sid.full_path(), item);
  }
  require(table.by_path.size() == table.by_item.size(), ErrorKind::contract,
          "assign_sids: SID paths are not unique after disambiguation");
  return table;
}

struct SidTrie {
  struct Node {
    std::map<int, int> children;  // branch value -> node index, sorted
    std::string item;             // non-empty only at leaves
    bool leaf = false;
  };
  std::vector<Node> nodes{Node{}};  // nodes[0] is the root

  int child(int node, int value) const {
    const auto& kids = nodes[node].children;
    auto it = kids.find(value);
    return it == kids.end() ? -1 : it->second;
  }

  void insert(const std::vector<int>& path, const std::string& item) {
    int node = 0;
    for (int value : path) {
      require(!nodes[node].leaf, ErrorKind::contract,
              "SidTrie: path runs through an existing leaf");
      auto [it, inserted] = nodes[node].children.emplace(value, 0);
      if (inserted) {
        it->second = static_cast<int>(nodes.size());
        nodes.push_back(Node{});
        // Re-fetch after potential reallocation.
      }
      node = nodes[node].children.at(value);
    }
    require(!nodes[node].leaf && nodes[node].children.empty(), ErrorKind::contract,
            "SidTrie: duplicate or prefix-conflicting path for item " + item);
    nodes[node].leaf = true;
    nodes[node].item = item;
  }

  std::size_t leaf_count() const {
    std::size_t total = 0;
    for (const auto& n : nodes) {
      total += n.leaf ? 1 : 0;
    }
    return total;
  }

  // All root-to-leaf paths with their items, in sorted path order.
  std::vector<std::pair<std::vector<int>, std::string>> all_paths() const {
    std::vector<std::pair<std::vector<int>, std::string>> out;
    std::vector<int> path;
    walk(0, path, out);
    return out;
  }

 private:
  void walk(int node, std::vector<int>& path,
            std::vector<std::pair<std::vector<int>, std::string>>& out) const {
    if (nodes[node].leaf) {
      out.emplace_back(path, nodes[node].item);
      return;
    }
    for (const auto& [value, next] : nodes[node].children) {
      path.push_back(value);
      walk(next, path, out);
      path.pop_back();
    }
  }
};

inline SidTrie build_trie(const SidTable& table) {
  SidTrie trie;
  for (const auto& [path, item] : table.by_path) {
    trie.insert(path, item);
  }
  require(trie.leaf_count() == table.by_item.size(), ErrorKind::contract,
          "build_trie: leaf count does not match item count");
  return trie;
}

// ---------------------------------------------------------------------------
// Interest locality: SID prefix agreement between item pairs that share a
// primary topic versus pairs that do not.
// ---------------------------------------------------------------------------

struct PrefixAgreement {
  double intra = 0.0;
  double inter = 0.0;
  std::size_t intra_pairs = 0;
  std::size_t inter_pairs = 0;
};

inline PrefixAgreement level1_agreement(const SidTable& table,
                                        const std::map<std::string, int>& primary_topic) {
  std::vector<std::pair<int, int>> labeled;  // (topic, level-1 code)
  for (const auto& [item, sid] : table.by_item) {
    auto it = primary_topic.find(item);
    if (it != primary_topic.end()) {
      labeled.emplace_back(it->second, sid.codes.at(0));
    }
  }
  PrefixAgreement result;
  double intra_sum = 0.0, inter_sum = 0.0;
  for (std::size_t a = 0; a < labeled.size(); ++a) {
    for (std::size_t b = a + 1; b < labeled.size(); ++b) {
      const bool same_code = labeled[a].second == labeled[b].second;
      if (labeled[a].first == labeled[b].first) {
        ++result.intra_pairs;
        intra_sum += same_code ? 1.0 : 0.0;
      } else {
        ++result.inter_pairs;
        inter_sum += same_code ? 1.0 : 0.0;
      }
    }
  }
  require(result.intra_pairs > 0 && result.inter_pairs > 0, ErrorKind::contract,
          "level1_agreement: need both intra-topic and inter-topic pairs");
  result.intra = intra_sum / static_cast<double>(result.intra_pairs);
  result.inter = inter_sum / static_cast<double>(result.inter_pairs);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr const char* kCodebooksVersion = "sidrec.codebooks.v1";

inline Json codebooks_to_json(const Codebooks& cb) {
  Json j;
  j["version"] = kCodebooksVersion;
  j["H"] = cb.H;
  j["K"] = cb.K;
  j["dim"] = cb.dim;
  j["seed"] = cb.seed;
  j["residual_energy"] = cb.residual_energy;
  j["centroids"] = cb.centroids;
  return j;
}

inline Codebooks codebooks_from_json(const Json& j) {
  try {
    require(j.at("version").get<std::string>() == kCodebooksVersion, ErrorKind::corrupt_input,
            "codebooks: unsupported version");
    Codebooks cb;
    cb.H = j.at("H").get<int>();
    cb.K = j.at("K").get<int>();
    cb.dim = j.at("dim").get<int>();
    cb.seed = j.at("seed").get<std::uint64_t>();
    cb.residual_energy = j.at("residual_energy").get<std::vector<double>>();
    cb.centroids = j.at("centroids").get<std::vector<std::vector<std::vector<double>>>>();
    require(static_cast<int>(cb.centroids.size()) == cb.H, ErrorKind::corrupt_input,
            "codebooks: centroid level count does not match H");
    for (const auto& level : cb.centroids) {
      require(static_cast<int>(level.size()) == cb.K, ErrorKind::corrupt_input,
              "codebooks: centroid entry count does not match K");
      for (const auto& c : level) {
        require(static_cast<int>(c.size()) == cb.dim, ErrorKind::corrupt_input,
                "codebooks: centroid dim mismatch");
        for (double v : c) {
          require(std::isfinite(v), ErrorKind::corrupt_input,
                  "codebooks: non-finite centroid value");
        }
      }
    }
    return cb;
  } catch (const Json::exception& e) {
    fail(ErrorKind::corrupt_input, std::string("codebooks: malformed document: ") + e.what());
  }
}

inline void write_codebooks(const std::filesystem::path& path, const Codebooks& cb) {
  write_json_file(path, codebooks_to_json(cb));
}

inline Codebooks read_codebooks(const std::filesystem::path& path) {
  return codebooks_from_json(read_json_file(path));
}

inline void write_sid_table(const std::filesystem::path& path, const SidTable& table) {
  std::vector<Json> lines;
  lines.reserve(table.by_item.size());
  for (const auto& [item, sid] : table.by_item) {
    Json j{{"item", item}, {"codes", sid.codes}};
    if (sid.has_disambiguator()) {
      j["disambiguator"] = sid.disambiguator;
    }
    lines.push_back(std::move(j));
  }
  write_jsonl_file(path, lines);
}

inline SidTable read_sid_table(const std::filesystem::path& path) {
  SidTable table;
  for (const auto& j : read_jsonl_file(path)) {
    try {
      SID sid;
      sid.codes = j.at("codes").get<std::vector<int>>();
      sid.disambiguator = j.value("disambiguator", -1);
      const std::string item = j.at("item").get<std::string>();
      require(!sid.codes.empty(), ErrorKind::corrupt_input, "sid table: empty code list");
      if (table.H == 0) {
        table.H = static_cast<int>(sid.codes.size());
      }
      require(static_cast<int>(sid.codes.size()) == table.H, ErrorKind::corrupt_input,
              "sid table: inconsistent SID lengths");
      auto [it, inserted] = table.by_path.emplace(sid.full_path(), item);
      require(inserted, ErrorKind::corrupt_input,
              "sid table: duplicate SID path for item " + item);
      require(table.by_item.emplace(item, std::move(sid)).second, ErrorKind::corrupt_input,
              "sid table: duplicate item " + item);
    } catch (const Json::exception& e) {
      fail(ErrorKind::corrupt_input, std::string("sid table: malformed line: ") + e.what());
    }
  }
  require(!table.by_item.empty(), ErrorKind::corrupt_input, "sid table: no entries");
  return table;
}

}  // namespace sidrec

#endif  // SIDREC_TOKENIZER_HPP
