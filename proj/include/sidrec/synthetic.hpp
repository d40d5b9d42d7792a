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
// Synthetic corpus with planted latent topics. Titles embed a `topic-<id>`
// tag plus topic keywords so interest recovery is checkable end to end
// without any external model.

#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/corpus.hpp"

namespace sidrec {

struct SynthConfig {
  int users = 100;
  int items = 200;
  int topics = 8;
  int min_seq_len = 6;
  int max_seq_len = 12;
  double primary_weight = 0.7;   // user weight on primary topic; rest on secondary
  double noise = 0.05;           // chance a step samples a uniform random item
  double zipf_exponent = 1.0;    // within-topic popularity skew (0 = uniform)
  int max_topics_per_item = 1;   // items carry 1..max_topics_per_item topics (<= 3)
  double caption_fraction = 0.5; // fraction of items given an image caption
  int topic_offset = 0;          // first topic id (transfer corpora use disjoint ranges)
};

struct SyntheticGroundTruth {
  int topic_count = 0;
  int topic_offset = 0;
  std::map<std::string, std::vector<int>> item_topics;          // global topic ids
  std::map<std::string, std::vector<double>> user_topic_weights;  // local index 0..topics-1
};

struct SyntheticCorpus {
  std::vector<UserSequence> sequences;
  std::vector<ItemMeta> items;
  SyntheticGroundTruth ground_truth;
};

namespace detail {

inline const std::array<const char*, 40>& synth_wordbank() {
  static const std::array<const char*, 40> words = {
      "amber",  "birch",  "cedar",  "copper", "coral",  "crimson", "dune",
      "ember",  "fern",   "flint",  "garnet", "hazel",  "indigo",  "ivory",
      "jade",   "juniper", "linen", "lotus",  "maple",  "marble",  "meadow",
      "mint",   "moss",   "night",  "ochre",  "onyx",   "opal",    "pearl",
      "pine",   "quartz", "raven",  "rose",   "saffron", "sage",   "slate",
      "storm",  "terra",  "umber",  "velvet", "willow"};
  return words;
}

inline std::array<std::string, 3> topic_keywords(int global_topic) {
  const auto& bank = synth_wordbank();
  const int n = static_cast<int>(bank.size());
  const int base = ((global_topic % n) + n) % n;
  return {bank[(base * 3) % n], bank[(base * 3 + 1) % n], bank[(base * 3 + 2) % n]};
}

inline std::string zero_padded(const char* prefix, int value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04d", prefix, value);
  return buf;
}

}  // namespace detail

// Deterministic in (config, seed). Each user draws a primary topic (weight
// `primary_weight`) and, unless degenerate, a distinct secondary topic with
// the remaining mass; each step samples an item from the drawn topic with a
// Zipf popularity skew, or a uniform random item with probability `noise`.
inline SyntheticCorpus generate_synthetic(const SynthConfig& cfg, uint64_t seed) {
  require(cfg.topics >= 2, ErrorKind::config, "synthetic corpus needs at least 2 topics");
  require(cfg.users >= 1, ErrorKind::config, "synthetic corpus needs at least 1 user");
  require(cfg.items >= cfg.topics, ErrorKind::config,
          "synthetic corpus needs at least one item per topic");
  require(cfg.min_seq_len >= 3 && cfg.max_seq_len >= cfg.min_seq_len, ErrorKind::config,
          "sequence length range must satisfy 3 <= min <= max");
  require(cfg.primary_weight > 0.0 && cfg.primary_weight <= 1.0, ErrorKind::config,
          "primary_weight must be in (0, 1]");
  require(cfg.noise >= 0.0 && cfg.noise < 1.0, ErrorKind::config, "noise must be in [0, 1)");
  require(cfg.zipf_exponent >= 0.0, ErrorKind::config, "zipf_exponent must be >= 0");
  require(cfg.max_topics_per_item >= 1 && cfg.max_topics_per_item <= 3, ErrorKind::config,
          "max_topics_per_item must be in 1..3");
  require(cfg.caption_fraction >= 0.0 && cfg.caption_fraction <= 1.0, ErrorKind::config,
          "caption_fraction must be in [0, 1]");

  Rng rng(seed);
  SyntheticCorpus corpus;
  corpus.ground_truth.topic_count = cfg.topics;
  corpus.ground_truth.topic_offset = cfg.topic_offset;

  // Items: primary topic round-robin, optional extra topics, metadata text.
  for (int n = 0; n < cfg.items; ++n) {
    const int local_primary = n % cfg.topics;
    const int global_primary = cfg.topic_offset + local_primary;
    std::vector<int> topics = {global_primary};
    if (cfg.max_topics_per_item > 1) {
      const int extra = static_cast<int>(rng.next_below(cfg.max_topics_per_item));
      for (int e = 0; e < extra; ++e) {
        const int candidate =
            cfg.topic_offset + static_cast<int>(rng.next_below(cfg.topics));
        bool dup = false;
        for (int t : topics) dup = dup || (t == candidate);
        if (!dup) topics.push_back(candidate);
      }
    }
    const std::string item_id = detail::zero_padded("item-", n);
    const auto kw = detail::topic_keywords(global_primary);
    ItemMeta meta;
    meta.item_id = item_id;
    meta.title = "topic-" + std::to_string(global_primary) + " " + kw[0] + " " + kw[1] +
                 " " + kw[2] + " " + item_id;
    meta.description = "A " + kw[0] + " and " + kw[1] + " product for " + kw[2] +
                       " enthusiasts in the topic-" + std::to_string(global_primary) +
                       " line.";
    meta.categories.push_back("synthetic");
    for (int t : topics) meta.categories.push_back("topic-" + std::to_string(t));
    if (rng.next_double() < cfg.caption_fraction) {
      meta.image_caption = "a photo of a " + kw[0] + " " + kw[1] +
                           " item in topic-" + std::to_string(global_primary) + " style";
    }
    corpus.items.push_back(std::move(meta));
    corpus.ground_truth.item_topics[item_id] = std::move(topics);
  }

  // Topic membership lists (an item appears under every topic it carries)
  // with within-topic Zipf popularity by membership rank.
  std::vector<std::vector<size_t>> members(cfg.topics);
  for (size_t idx = 0; idx < corpus.items.size(); ++idx) {
    for (int t : corpus.ground_truth.item_topics.at(corpus.items[idx].item_id)) {
      members[t - cfg.topic_offset].push_back(idx);
    }
  }
  std::vector<std::vector<double>> popularity(cfg.topics);
  for (int t = 0; t < cfg.topics; ++t) {
    require(!members[t].empty(), ErrorKind::config,
            "synthetic topic " + std::to_string(cfg.topic_offset + t) + " has no items");
    popularity[t].resize(members[t].size());
    for (size_t r = 0; r < members[t].size(); ++r) {
      popularity[t][r] = std::pow(static_cast<double>(r + 1), -cfg.zipf_exponent);
    }
  }

  // Users: primary topic, optional secondary, then the sampled sequence.
  for (int u = 0; u < cfg.users; ++u) {
    const std::string user_id = detail::zero_padded("user-", u);
    const int primary = static_cast<int>(rng.next_below(cfg.topics));
    std::vector<double> weights(cfg.topics, 0.0);
    int secondary = -1;
    if (cfg.primary_weight < 1.0) {
      secondary = static_cast<int>(rng.next_below(cfg.topics - 1));
      if (secondary >= primary) ++secondary;
      weights[primary] = cfg.primary_weight;
      weights[secondary] = 1.0 - cfg.primary_weight;
    } else {
      weights[primary] = 1.0;
    }
    corpus.ground_truth.user_topic_weights[user_id] = weights;

    const int len = cfg.min_seq_len +
                    static_cast<int>(rng.next_below(cfg.max_seq_len - cfg.min_seq_len + 1));
    UserSequence seq;
    seq.user_id = user_id;
    for (int pos = 0; pos < len; ++pos) {
      size_t item_index;
      if (rng.next_double() < cfg.noise) {
        item_index = rng.next_below(corpus.items.size());
      } else {
        const int topic =
            (secondary >= 0 && rng.next_double() >= cfg.primary_weight) ? secondary
                                                                        : primary;
        const size_t rank = rng.next_weighted(popularity[topic]);
        item_index = members[topic][rank];
      }
      seq.items.push_back(corpus.items[item_index].item_id);
    }
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

// Ground-truth serialization so pipeline stages and tests can reload it.
inline Json ground_truth_to_json(const SyntheticGroundTruth& gt) {
  Json j;
  j["topic_count"] = gt.topic_count;
  j["topic_offset"] = gt.topic_offset;
  j["item_topics"] = gt.item_topics;
  j["user_topic_weights"] = gt.user_topic_weights;
  return j;
}

inline SyntheticGroundTruth ground_truth_from_json(const Json& j) {
  SyntheticGroundTruth gt;
  gt.topic_count = j.at("topic_count").get<int>();
  gt.topic_offset = j.at("topic_offset").get<int>();
  gt.item_topics = j.at("item_topics").get<std::map<std::string, std::vector<int>>>();
  gt.user_topic_weights =
      j.at("user_topic_weights").get<std::map<std::string, std::vector<double>>>();
  return gt;
}

}  // namespace sidrec
