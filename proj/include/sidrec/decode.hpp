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
// Trie-constrained decoding over the SID vocabulary: beam search for ranked
// recommendation lists and temperature sampling for policy-gradient rollouts.

#ifndef SIDREC_DECODE_HPP
#define SIDREC_DECODE_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/genmodel.hpp"
#include "sidrec/tokenizer.hpp"
#include "sidrec/vocab.hpp"

namespace sidrec {

struct Generated {
  std::string item_id;
  double log_prob = 0.0;              // total over generated tokens
  std::vector<int> tokens;            // generated tokens (history excluded)
  std::vector<double> step_log_probs; // per-token, under the decoding distribution
};

namespace detail {

// Vocabulary token for a trie branch: code tokens at depths below H,
// disambiguator tokens at depth H.
inline int trie_branch_token(const Vocab& vocab, int depth, int value) {
  return depth < vocab.H ? vocab.code_token(depth, value) : vocab.disamb_token(value);
}

}  // namespace detail

// Standard beam search over trie-valid extensions. Returns up to `beam`
// complete items ordered by total log-probability, ties broken by SID
// lexicographic order.
template <typename Scalar>
std::vector<Generated> beam_search(const GenModelT<Scalar>& model, const TokenSequence& x,
                                   const SidTrie& trie, const Vocab& vocab, int beam,
                                   int max_len = 0) {
  require(beam >= 1, ErrorKind::contract, "beam_search: beam must be positive");
  require(trie.leaf_count() > 0, ErrorKind::contract, "beam_search: empty trie");
  require(!x.tokens.empty() && x.tokens.front() == Vocab::kBos, ErrorKind::contract,
          "beam_search: history must begin with BOS");
  if (max_len <= 0) {
    max_len = vocab.H + 1;
  }
  require(static_cast<int>(x.tokens.size()) + max_len <= model.cfg.context,
          ErrorKind::contract, "beam_search: history plus generation exceeds context");

  struct Beam {
    int node = 0;
    int depth = 0;
    double log_prob = 0.0;
    std::vector<int> tokens;
    std::vector<double> step_log_probs;
  };

  std::vector<Beam> live{Beam{}};
  std::vector<Generated> results;

  std::vector<int> seq = x.tokens;
  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Beam> complete, incomplete;
    for (const Beam& b : live) {
      seq.resize(x.tokens.size());
      seq.insert(seq.end(), b.tokens.begin(), b.tokens.end());
      const auto lp = next_token_log_probs(model, seq);
      for (const auto& [value, node] : trie.nodes[b.node].children) {
        const int token = detail::trie_branch_token(vocab, b.depth, value);
        Beam next = b;
        next.node = node;
        next.depth = b.depth + 1;
        next.log_prob += lp[token];
        next.tokens.push_back(token);
        next.step_log_probs.push_back(lp[token]);
        (trie.nodes[node].leaf ? complete : incomplete).push_back(std::move(next));
      }
    }
    auto order = [](const Beam& a, const Beam& b) {
      if (a.log_prob != b.log_prob) {
        return a.log_prob > b.log_prob;
      }
      return a.tokens < b.tokens;
    };
    std::sort(complete.begin(), complete.end(), order);
    std::sort(incomplete.begin(), incomplete.end(), order);
    for (const Beam& b : complete) {
      Generated g;
      g.item_id = trie.nodes[b.node].item;
      g.log_prob = b.log_prob;
      g.tokens = b.tokens;
      g.step_log_probs = b.step_log_probs;
      results.push_back(std::move(g));
    }
    if (static_cast<int>(incomplete.size()) > beam) {
      incomplete.resize(beam);
    }
    live = std::move(incomplete);
  }

  std::sort(results.begin(), results.end(), [](const Generated& a, const Generated& b) {
    if (a.log_prob != b.log_prob) {
      return a.log_prob > b.log_prob;
    }
    return a.tokens < b.tokens;
  });
  if (static_cast<int>(results.size()) > beam) {
    results.resize(beam);
  }
  return results;
}

// G independent ancestral samples through the trie. At each step, tokens
// outside the valid children are masked out and the remaining logits divided
// by the temperature before the softmax. step_log_probs records the sampling
// distribution's log-probabilities.
template <typename Scalar>
std::vector<Generated> sample_rollouts(const GenModelT<Scalar>& model,
                                       const TokenSequence& x, const SidTrie& trie,
                                       const Vocab& vocab, int G, double temperature,
                                       std::uint64_t seed) {
  require(G >= 1, ErrorKind::contract, "sample_rollouts: G must be positive");
  require(temperature > 0.0, ErrorKind::contract,
          "sample_rollouts: temperature must be positive");
  require(trie.leaf_count() > 0, ErrorKind::contract, "sample_rollouts: empty trie");
  require(static_cast<int>(x.tokens.size()) + vocab.H + 1 <= model.cfg.context,
          ErrorKind::contract, "sample_rollouts: history plus generation exceeds context");

  Rng rng(seed);
  std::vector<Generated> out;
  out.reserve(G);
  std::vector<int> seq;
  for (int g = 0; g < G; ++g) {
    Generated sample;
    int node = 0;
    int depth = 0;
    seq = x.tokens;
    while (!trie.nodes[node].leaf) {
      const auto lp = next_token_log_probs(model, seq);
      const auto& children = trie.nodes[node].children;
      std::vector<double> tempered;
      std::vector<int> tokens, nodes;
      tempered.reserve(children.size());
      double maxv = -std::numeric_limits<double>::infinity();
      for (const auto& [value, child] : children) {
        const int token = detail::trie_branch_token(vocab, depth, value);
        tokens.push_back(token);
        nodes.push_back(child);
        tempered.push_back(lp[token] / temperature);
        maxv = std::max(maxv, tempered.back());
      }
      double total = 0.0;
      for (double& t : tempered) {
        t = std::exp(t - maxv);
        total += t;
      }
      const double u = rng.next_double() * total;
      std::size_t pick = tempered.size() - 1;
      double acc = 0.0;
      for (std::size_t i = 0; i < tempered.size(); ++i) {
        acc += tempered[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
      sample.tokens.push_back(tokens[pick]);
      sample.step_log_probs.push_back(std::log(tempered[pick] / total));
      sample.log_prob += sample.step_log_probs.back();
      seq.push_back(tokens[pick]);
      node = nodes[pick];
      ++depth;
    }
    sample.item_id = trie.nodes[node].item;
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace sidrec

#endif  // SIDREC_DECODE_HPP
