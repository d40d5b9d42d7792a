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
// GRPO fine-tuning with the interest-aware reward: reward strategies,
// group-normalized advantages, per-token full-distribution KL against a frozen
// reference, and the policy-gradient training loop.

#ifndef SIDREC_RL_HPP
#define SIDREC_RL_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/corpus.hpp"
#include "sidrec/decode.hpp"
#include "sidrec/genmodel.hpp"
#include "sidrec/interests.hpp"
#include "sidrec/tokenizer.hpp"
#include "sidrec/vocab.hpp"

namespace sidrec {

struct RewardStrategy {
  std::string kind = "interest_aware";  // rule_binary | prefix_match | interest_aware
  double alpha = 0.5;
  // Eq. 13's indicator reads the predicted item's label by default; the
  // target-item reading stays available behind this switch.
  bool indicator_on_target = false;
};

inline void validate_reward_strategy(const RewardStrategy& s) {
  require(s.kind == "rule_binary" || s.kind == "prefix_match" || s.kind == "interest_aware",
          ErrorKind::config, "RewardStrategy: unknown kind " + s.kind);
  require(s.alpha >= 0.0, ErrorKind::config, "RewardStrategy: alpha must be non-negative");
}

struct ItemLabelTable {
  std::map<std::string, int> labels;

  int label(const std::string& item) const {
    auto it = labels.find(item);
    return it == labels.end() ? 0 : it->second;
  }
};

// Majority vote over the item's aggregated interest labels; ties follow the
// top-ranked labeled interest; unlabeled items default to 0.
inline int item_label(const AggregatedInterests& agg) {
  int ones = 0, zeros = 0;
  const Interest* top_labeled = nullptr;
  for (const auto& interest : agg.interests) {
    if (interest.rldi_label == 1) {
      ++ones;
    } else if (interest.rldi_label == 0) {
      ++zeros;
    } else {
      continue;
    }
    if (top_labeled == nullptr) {
      top_labeled = &interest;
    }
  }
  if (ones == 0 && zeros == 0) {
    return 0;
  }
  if (ones != zeros) {
    return ones > zeros ? 1 : 0;
  }
  return top_labeled->rldi_label == 1 ? 1 : 0;
}

inline ItemLabelTable build_item_labels(const std::vector<AggregatedInterests>& mined) {
  ItemLabelTable table;
  for (const auto& agg : mined) {
    table.labels[agg.item_id] = item_label(agg);
  }
  return table;
}

inline double compute_reward(const RewardStrategy& strategy, const SID& generated,
                             const std::string& generated_item, const std::string& target,
                             const SidTable& table, const ItemLabelTable& labels) {
  validate_reward_strategy(strategy);
  auto target_it = table.by_item.find(target);
  require(target_it != table.by_item.end(), ErrorKind::contract,
          "compute_reward: target " + target + " has no SID");
  if (generated_item.empty() || table.by_item.find(generated_item) == table.by_item.end()) {
    return 0.0;
  }
  const bool hit = generated_item == target;
  if (strategy.kind == "rule_binary") {
    return hit ? 1.0 : 0.0;
  }
  if (strategy.kind == "prefix_match") {
    const auto& target_codes = target_it->second.codes;
    std::size_t match = 0;
    while (match < generated.codes.size() && match < target_codes.size() &&
           generated.codes[match] == target_codes[match]) {
      ++match;
    }
    return static_cast<double>(match) / static_cast<double>(table.H);
  }
  const std::string& judged = strategy.indicator_on_target ? target : generated_item;
  return (hit ? 1.0 : 0.0) + (labels.label(judged) == 1 ? strategy.alpha : 0.0);
}

// Group-normalized advantages with the population standard deviation; groups
// with (near-)uniform rewards contribute zero advantage.
inline std::vector<double> normalize_advantages(const std::vector<double>& rewards,
                                                double std_epsilon = 1e-8) {
  require(rewards.size() >= 2, ErrorKind::contract,
          "normalize_advantages: need a group of at least 2");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) {
    mean += r;
  }
  mean /= n;
  double var = 0.0;
  for (double r : rewards) {
    var += (r - mean) * (r - mean);
  }
  var /= n;
  const double std = std::sqrt(var);
  std::vector<double> out(rewards.size(), 0.0);
  if (std < std_epsilon) {
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i] - mean) / std;
  }
  return out;
}

// KL(p || q) for two categorical distributions.
inline double categorical_kl(const std::vector<double>& p, const std::vector<double>& q) {
  require(p.size() == q.size(), ErrorKind::contract,
          "categorical_kl: distribution sizes differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) {
      continue;
    }
    require(q[i] > 0.0, ErrorKind::numerical,
            "categorical_kl: reference assigns zero mass where the policy does not");
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

namespace detail {

template <typename Scalar>
std::vector<double> softmax_row_double(const Scalar* row, int n) {
  double maxv = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    maxv = std::max(maxv, static_cast<double>(row[i]));
  }
  double total = 0.0;
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(static_cast<double>(row[i]) - maxv);
    total += out[i];
  }
  for (double& v : out) {
    v /= total;
  }
  return out;
}

}  // namespace detail

// Mean over target positions of the full-distribution KL between the policy's
// and the reference's next-token softmax at the sampled sequence's contexts.
template <typename Scalar>
double kl_penalty(const GenModelT<Scalar>& policy, const GenModelT<Scalar>& reference,
                  const TokenSequence& tokens) {
  require(policy.cfg.vocab_size == reference.cfg.vocab_size, ErrorKind::contract,
          "kl_penalty: vocabulary sizes differ");
  require(policy.cfg.context == reference.cfg.context, ErrorKind::contract,
          "kl_penalty: context lengths differ");
  validate_token_sequence(tokens, policy.cfg.context);
  ForwardCache<Scalar> pc, rc;
  gen_forward(policy, tokens.tokens, pc);
  gen_forward(reference, tokens.tokens, rc);
  const int V = policy.cfg.vocab_size;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = tokens.boundary; t < tokens.tokens.size(); ++t) {
    const std::size_t ctx = t - 1;
    const auto p = detail::softmax_row_double(pc.logits.data() + ctx * V, V);
    const auto q = detail::softmax_row_double(rc.logits.data() + ctx * V, V);
    total += categorical_kl(p, q);
    ++count;
  }
  return total / static_cast<double>(count);
}

struct RLConfig {
  int G = 10;
  double temperature = 0.5;
  double beta = 0.001;
  double lr = 1e-4;
  int epochs = 1;
  int batch_size = 4;
  double std_epsilon = 1e-8;
  std::uint64_t seed = 0;
  int n_hist = 20;
  int threads = 1;
  std::string optimizer = "adam";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // 0 = use every training query each epoch; otherwise subsample for budget.
  int queries_per_epoch = 0;
};

inline void validate_rl_config(const RLConfig& cfg) {
  require(cfg.G >= 2, ErrorKind::config, "RLConfig: G must be at least 2 for normalization");
  require(cfg.temperature > 0.0, ErrorKind::config, "RLConfig: temperature must be positive");
  require(cfg.beta >= 0.0, ErrorKind::config, "RLConfig: beta must be non-negative");
  require(cfg.lr >= 0.0, ErrorKind::config, "RLConfig: lr must be non-negative");
  require(cfg.epochs >= 0, ErrorKind::config, "RLConfig: epochs must be non-negative");
  require(cfg.batch_size >= 1, ErrorKind::config, "RLConfig: batch_size must be positive");
  require(cfg.std_epsilon > 0.0, ErrorKind::config, "RLConfig: std_epsilon must be positive");
  require(cfg.optimizer == "adam" || cfg.optimizer == "sgd", ErrorKind::config,
          "RLConfig: optimizer must be adam or sgd");
  require(cfg.queries_per_epoch >= 0, ErrorKind::config,
          "RLConfig: queries_per_epoch must be non-negative");
}

struct RLQuery {
  TokenSequence x;
  std::string target;
};

struct GrpoStepMetrics {
  double loss = 0.0;
  double mean_reward = 0.0;
  double mean_advantage = 0.0;
  double mean_kl = 0.0;
  double rollout_hit_rate = 0.0;
  double group_any_hit_rate = 0.0;
};

// One GRPO update over a batch of queries: G rollouts per query, rewards,
// group-normalized advantages, then an ascent step on
//   sum_j A_j * log pi_theta(y_j | X) - beta * KL(pi_theta || pi_ref).
template <typename Scalar>
GrpoStepMetrics grpo_step(GenModelT<Scalar>& policy, const GenModelT<Scalar>& reference,
                          const std::vector<RLQuery>& queries, const SidTrie& trie,
                          const Vocab& vocab, const RewardStrategy& strategy,
                          const ItemLabelTable& labels, const SidTable& table,
                          const RLConfig& cfg, AdamState& opt_state,
                          std::uint64_t rollout_seed) {
  validate_rl_config(cfg);
  validate_reward_strategy(strategy);
  require(!queries.empty(), ErrorKind::contract, "grpo_step: empty query batch");
  require(policy.cfg.vocab_size == reference.cfg.vocab_size, ErrorKind::contract,
          "grpo_step: policy and reference vocabularies differ");

  const int V = policy.cfg.vocab_size;
  const double scale = 1.0 / (static_cast<double>(queries.size()) * cfg.G);

  GrpoStepMetrics metrics;
  std::vector<std::vector<Scalar>> grads(queries.size());
  std::vector<double> losses(queries.size(), 0.0);
  std::vector<double> rewards_sum(queries.size(), 0.0);
  std::vector<double> adv_sum(queries.size(), 0.0);
  std::vector<double> kl_sum(queries.size(), 0.0);
  std::vector<double> hits(queries.size(), 0.0);
  std::vector<double> any_hit(queries.size(), 0.0);

  parallel_for(queries.size(), cfg.threads, [&](std::size_t qi) {
    const RLQuery& query = queries[qi];
    const std::uint64_t seed =
        fnv1a64(std::to_string(qi), fnv1a64(std::to_string(rollout_seed)));
    auto rollouts =
        sample_rollouts(policy, query.x, trie, vocab, cfg.G, cfg.temperature, seed);

    std::vector<double> rewards(rollouts.size(), 0.0);
    for (std::size_t j = 0; j < rollouts.size(); ++j) {
      const auto& item = rollouts[j].item_id;
      const SID& sid = table.by_item.at(item);
      rewards[j] = compute_reward(strategy, sid, item, query.target, table, labels);
      rewards_sum[qi] += rewards[j];
      if (item == query.target) {
        hits[qi] += 1.0;
        any_hit[qi] = 1.0;
      }
    }
    const auto advantages = normalize_advantages(rewards, cfg.std_epsilon);
    for (double a : advantages) {
      adv_sum[qi] += a;
    }

    grads[qi].assign(policy.param_count(), Scalar(0));
    for (std::size_t j = 0; j < rollouts.size(); ++j) {
      TokenSequence seq;
      seq.tokens = query.x.tokens;
      seq.tokens.insert(seq.tokens.end(), rollouts[j].tokens.begin(),
                        rollouts[j].tokens.end());
      seq.boundary = query.x.tokens.size();
      validate_token_sequence(seq, policy.cfg.context);

      ForwardCache<Scalar> pc, rc;
      gen_forward(policy, seq.tokens, pc);
      gen_forward(reference, seq.tokens, rc);

      const std::size_t n_targets = seq.tokens.size() - seq.boundary;
      std::vector<Scalar> dlogits(static_cast<std::size_t>(pc.T) * V, Scalar(0));
      double log_prob = 0.0;
      double kl_pen = 0.0;
      for (std::size_t t = seq.boundary; t < seq.tokens.size(); ++t) {
        const std::size_t ctx = t - 1;
        const auto p = detail::softmax_row_double(pc.logits.data() + ctx * V, V);
        const auto q = detail::softmax_row_double(rc.logits.data() + ctx * V, V);
        const int y = seq.tokens[t];
        log_prob += std::log(p[y]);
        const double kl_t = categorical_kl(p, q);
        kl_pen += kl_t;
        Scalar* drow = dlogits.data() + ctx * V;
        const double pg = advantages[j] * scale;
        const double kw = cfg.beta * scale / static_cast<double>(n_targets);
        for (int i = 0; i < V; ++i) {
          double d = pg * p[i];
          d += kw * p[i] * (std::log(p[i]) - std::log(q[i]) - kl_t);
          drow[i] += static_cast<Scalar>(d);
        }
        drow[y] -= static_cast<Scalar>(pg);
      }
      kl_pen /= static_cast<double>(n_targets);
      kl_sum[qi] += kl_pen;
      losses[qi] += scale * (-advantages[j] * log_prob + cfg.beta * kl_pen);
      gen_backward(policy, seq.tokens, pc, dlogits, grads[qi]);
    }
  });

  std::vector<Scalar> grad(policy.param_count(), Scalar(0));
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    metrics.loss += losses[qi];
    metrics.mean_reward += rewards_sum[qi];
    metrics.mean_advantage += adv_sum[qi];
    metrics.mean_kl += kl_sum[qi];
    metrics.rollout_hit_rate += hits[qi];
    metrics.group_any_hit_rate += any_hit[qi];
    for (std::size_t i = 0; i < grad.size(); ++i) {
      grad[i] += grads[qi][i];
    }
  }
  metrics.mean_reward *= scale;
  metrics.mean_advantage *= scale;
  metrics.mean_kl *= scale;
  metrics.rollout_hit_rate *= scale;
  metrics.group_any_hit_rate /= static_cast<double>(queries.size());

  require(std::isfinite(metrics.loss), ErrorKind::training,
          "grpo_step: non-finite loss (mean_reward=" + std::to_string(metrics.mean_reward) +
              ", mean_kl=" + std::to_string(metrics.mean_kl) + ")");
  if (cfg.optimizer == "adam") {
    adam_update(policy, grad, opt_state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  } else {
    sgd_update(policy, grad, cfg.lr);
  }
  return metrics;
}

struct RewardCurvePoint {
  long long step = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double group_hit_rate = 0.0;
};

template <typename Scalar>
struct GrpoResult {
  GenModelT<Scalar> policy;
  std::vector<RewardCurvePoint> curve;
  std::vector<double> epoch_mean_reward;
};

template <typename Scalar>
GrpoResult<Scalar> grpo_train(GenModelT<Scalar> policy, const GenModelT<Scalar>& reference,
                              const SplitDataset& data, const SidTable& table,
                              const SidTrie& trie, const Vocab& vocab,
                              const RewardStrategy& strategy, const ItemLabelTable& labels,
                              const RLConfig& cfg) {
  validate_rl_config(cfg);
  validate_reward_strategy(strategy);
  require(policy.cfg == reference.cfg, ErrorKind::contract,
          "grpo_train: policy and reference configurations differ");
  require(!data.train.empty(), ErrorKind::contract, "grpo_train: no training queries");

  std::vector<RLQuery> queries;
  queries.reserve(data.train.size());
  for (const auto& ex : data.train) {
    RLQuery q;
    q.x = encode_history(table, vocab, ex.history, cfg.n_hist);
    q.target = ex.target;
    require(static_cast<int>(q.x.tokens.size()) + vocab.H + 1 <= policy.cfg.context,
            ErrorKind::config,
            "grpo_train: user " + ex.user + " history at n_hist " +
                std::to_string(cfg.n_hist) + " leaves no room for generation in context " +
                std::to_string(policy.cfg.context));
    queries.push_back(std::move(q));
  }

  GrpoResult<Scalar> result;
  AdamState opt_state;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(queries.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  // When queries_per_epoch caps the epoch, the working set is drawn once so
  // per-epoch mean rewards compare like with like; only its order reshuffles
  // between epochs.
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.next_below(i)]);
  }
  if (cfg.queries_per_epoch > 0 &&
      order.size() > static_cast<std::size_t>(cfg.queries_per_epoch)) {
    order.resize(static_cast<std::size_t>(cfg.queries_per_epoch));
  }

  long long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.next_below(i)]);
    }
    const std::size_t epoch_n = order.size();
    double epoch_reward = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t begin = 0; begin < epoch_n; begin += cfg.batch_size) {
      const std::size_t end = std::min(epoch_n, begin + cfg.batch_size);
      std::vector<RLQuery> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(queries[order[i]]);
      }
      const std::uint64_t rollout_seed =
          fnv1a64(std::to_string(step), fnv1a64(std::to_string(cfg.seed)));
      auto metrics = grpo_step(policy, reference, batch, trie, vocab, strategy, labels,
                               table, cfg, opt_state, rollout_seed);
      ++step;
      result.curve.push_back(
          {step, metrics.mean_reward, metrics.mean_kl, metrics.group_any_hit_rate});
      epoch_reward += metrics.mean_reward;
      ++epoch_steps;
    }
    result.epoch_mean_reward.push_back(epoch_reward / static_cast<double>(epoch_steps));
  }
  result.policy = std::move(policy);
  return result;
}

}  // namespace sidrec

#endif  // SIDREC_RL_HPP
