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
// Ranking metrics (HR@K, NDCG@K), the interest-quality score, and the
// beam-search evaluation loop that produces a MetricsReport.

#ifndef SIDREC_METRICS_HPP
#define SIDREC_METRICS_HPP

#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/corpus.hpp"
#include "sidrec/decode.hpp"
#include "sidrec/embed.hpp"
#include "sidrec/genmodel.hpp"
#include "sidrec/interests.hpp"
#include "sidrec/tokenizer.hpp"
#include "sidrec/vocab.hpp"

namespace sidrec {

struct MetricsReport {
  std::string arm;
  std::string dataset;
  std::map<int, double> hr;
  std::map<int, double> ndcg;
  std::optional<double> iq;
  int n_users = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  friend bool operator==(const MetricsReport& a, const MetricsReport& b) {
    return a.arm == b.arm && a.dataset == b.dataset && a.hr == b.hr && a.ndcg == b.ndcg &&
           a.iq == b.iq && a.n_users == b.n_users && a.seed == b.seed &&
           a.config_hash == b.config_hash;
  }
};

inline void validate_metrics_report(const MetricsReport& report) {
  const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  for (const auto& [k, v] : report.hr) {
    require(k >= 1 && in_unit(v), ErrorKind::contract,
            "MetricsReport: HR@" + std::to_string(k) + " out of range");
  }
  for (const auto& [k, v] : report.ndcg) {
    require(k >= 1 && in_unit(v), ErrorKind::contract,
            "MetricsReport: NDCG@" + std::to_string(k) + " out of range");
  }
  if (report.iq.has_value()) {
    require(*report.iq >= -1.0 && *report.iq <= 1.0, ErrorKind::contract,
            "MetricsReport: IQ out of range");
  }
  require(report.n_users >= 0, ErrorKind::contract, "MetricsReport: negative n_users");
}

inline Json metrics_report_to_json(const MetricsReport& report) {
  validate_metrics_report(report);
  Json j;
  j["arm"] = report.arm;
  j["dataset"] = report.dataset;
  Json hr = Json::object(), ndcg = Json::object();
  for (const auto& [k, v] : report.hr) {
    hr[std::to_string(k)] = v;
  }
  for (const auto& [k, v] : report.ndcg) {
    ndcg[std::to_string(k)] = v;
  }
  j["hr"] = hr;
  j["ndcg"] = ndcg;
  if (report.iq.has_value()) {
    j["iq"] = *report.iq;
  }
  j["n_users"] = report.n_users;
  j["seed"] = report.seed;
  j["config_hash"] = report.config_hash;
  return j;
}

inline MetricsReport metrics_report_from_json(const Json& j) {
  MetricsReport report;
  try {
    report.arm = j.at("arm").get<std::string>();
    report.dataset = j.at("dataset").get<std::string>();
    for (const auto& [k, v] : j.at("hr").items()) {
      report.hr[std::stoi(k)] = v.get<double>();
    }
    for (const auto& [k, v] : j.at("ndcg").items()) {
      report.ndcg[std::stoi(k)] = v.get<double>();
    }
    if (j.contains("iq")) {
      report.iq = j.at("iq").get<double>();
    }
    report.n_users = j.at("n_users").get<int>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.config_hash = j.at("config_hash").get<std::string>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::corrupt_input, std::string("MetricsReport: bad JSON: ") + e.what());
  }
  validate_metrics_report(report);
  return report;
}

inline std::string format_metrics_table(const MetricsReport& report) {
  std::ostringstream out;
  out << "arm=" << (report.arm.empty() ? "-" : report.arm)
      << " dataset=" << (report.dataset.empty() ? "-" : report.dataset)
      << " users=" << report.n_users << " seed=" << report.seed;
  if (!report.config_hash.empty()) {
    out << " config=" << report.config_hash;
  }
  out << "\n";
  out << std::setw(6) << "K" << std::setw(10) << "HR@K" << std::setw(10) << "NDCG@K"
      << "\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& [k, v] : report.hr) {
    out << std::setw(6) << k << std::setw(10) << v << std::setw(10)
        << (report.ndcg.count(k) ? report.ndcg.at(k) : 0.0) << "\n";
  }
  if (report.iq.has_value()) {
    out << std::setw(6) << "IQ" << std::setw(10) << *report.iq << "\n";
  }
  return out.str();
}

namespace detail {

// 1-based rank of the target in the ranking, or 0 when absent.
inline int target_rank(const std::vector<std::string>& ranking, const std::string& target) {
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (ranking[i] == target) {
      return static_cast<int>(i) + 1;
    }
  }
  return 0;
}

inline void check_ranking_args(const std::vector<std::vector<std::string>>& rankings,
                               const std::vector<std::string>& targets, int K) {
  require(!rankings.empty(), ErrorKind::contract, "metrics: no rankings");
  require(rankings.size() == targets.size(), ErrorKind::contract,
          "metrics: rankings and targets differ in length");
  require(K >= 1, ErrorKind::contract, "metrics: K must be positive");
}

}  // namespace detail

// Fraction of users whose target appears in the top K of their ranking.
inline double hit_rate(const std::vector<std::vector<std::string>>& rankings,
                       const std::vector<std::string>& targets, int K) {
  detail::check_ranking_args(rankings, targets, K);
  std::size_t hits = 0;
  for (std::size_t u = 0; u < rankings.size(); ++u) {
    const int rank = detail::target_rank(rankings[u], targets[u]);
    if (rank >= 1 && rank <= K) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

// Mean over users of 1/log2(rank+1) when the target ranks within K, else 0.
// With a single relevant item the ideal DCG is 1, so no further normalization.
inline double ndcg(const std::vector<std::vector<std::string>>& rankings,
                   const std::vector<std::string>& targets, int K) {
  detail::check_ranking_args(rankings, targets, K);
  double total = 0.0;
  for (std::size_t u = 0; u < rankings.size(); ++u) {
    const int rank = detail::target_rank(rankings[u], targets[u]);
    if (rank >= 1 && rank <= K) {
      total += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }
  return total / static_cast<double>(rankings.size());
}

// Mean over (user, future item) pairs of the cosine between the user's
// interest embedding and the future item's embedding.
inline double interest_quality(
    const std::map<std::string, AggregatedInterests>& user_interests,
    const std::map<std::string, std::vector<std::string>>& future_items,
    const std::map<std::string, EmbeddingVector>& item_embeddings, Embedder& embedder) {
  require(!user_interests.empty(), ErrorKind::contract, "interest_quality: no users");
  double total = 0.0;
  std::size_t pairs = 0;
  for (const auto& [user, agg] : user_interests) {
    auto fit = future_items.find(user);
    require(fit != future_items.end() && !fit->second.empty(), ErrorKind::contract,
            "interest_quality: user " + user + " has no future items");
    const EmbeddingVector interest_emb = deep_item_embedding(embedder, agg);
    for (const auto& item : fit->second) {
      auto eit = item_embeddings.find(item);
      require(eit != item_embeddings.end(), ErrorKind::contract,
              "interest_quality: missing embedding for item " + item);
      total += cosine(interest_emb, eit->second);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

struct EvalConfig {
  int beam = 20;
  std::vector<int> Ks = {5, 10};
  int n_hist = 20;
  int threads = 1;
};

inline void validate_eval_config(const EvalConfig& cfg) {
  require(cfg.beam >= 1, ErrorKind::config, "EvalConfig: beam must be positive");
  require(!cfg.Ks.empty(), ErrorKind::config, "EvalConfig: at least one K required");
  for (int k : cfg.Ks) {
    require(k >= 1, ErrorKind::config, "EvalConfig: K must be positive");
  }
  require(cfg.n_hist >= 1, ErrorKind::config, "EvalConfig: n_hist must be positive");
}

// Beam-ranked item lists for every example, in example order.
template <typename Scalar>
std::vector<std::vector<std::string>> beam_rankings(
    const GenModelT<Scalar>& model, const std::vector<SplitExample>& examples,
    const SidTable& table, const SidTrie& trie, const Vocab& vocab,
    const EvalConfig& cfg) {
  validate_eval_config(cfg);
  require(!examples.empty(), ErrorKind::contract, "beam_rankings: no examples");
  std::vector<std::vector<std::string>> rankings(examples.size());
  parallel_for(examples.size(), cfg.threads, [&](std::size_t u) {
    const TokenSequence x = encode_history(table, vocab, examples[u].history, cfg.n_hist);
    const auto results = beam_search(model, x, trie, vocab, cfg.beam);
    rankings[u].reserve(results.size());
    for (const auto& r : results) {
      rankings[u].push_back(r.item_id);
    }
  });
  return rankings;
}

template <typename Scalar>
MetricsReport evaluate(const GenModelT<Scalar>& model,
                       const std::vector<SplitExample>& examples, const SidTable& table,
                       const SidTrie& trie, const Vocab& vocab, const EvalConfig& cfg) {
  const auto rankings = beam_rankings(model, examples, table, trie, vocab, cfg);
  std::vector<std::string> targets;
  targets.reserve(examples.size());
  for (const auto& ex : examples) {
    targets.push_back(ex.target);
  }
  MetricsReport report;
  report.n_users = static_cast<int>(examples.size());
  for (int k : cfg.Ks) {
    report.hr[k] = hit_rate(rankings, targets, k);
    report.ndcg[k] = ndcg(rankings, targets, k);
  }
  validate_metrics_report(report);
  return report;
}

}  // namespace sidrec

#endif  // SIDREC_METRICS_HPP
