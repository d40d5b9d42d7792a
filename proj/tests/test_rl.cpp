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
#include <limits>
#include <string>
#include <vector>

#include "sidrec/rl.hpp"

using namespace sidrec;

namespace {

struct ErrorKindIs : Catch::Matchers::MatcherGenericBase {
  explicit ErrorKindIs(ErrorKind kind) : kind_(kind) {}
  bool match(const Error& e) const { return e.kind() == kind_; }
  std::string describe() const override { return "has the expected error kind"; }
  ErrorKind kind_;
};

SidTable toy_table() {
  // H=2, K=2 paths; one collision group of three items. Six items total.
  SidTable table;
  table.H = 2;
  table.by_item["item-a"] = SID{{0, 0}, -1};
  table.by_item["item-b"] = SID{{0, 1}, -1};
  table.by_item["item-c"] = SID{{1, 0}, 0};
  table.by_item["item-d"] = SID{{1, 0}, 1};
  table.by_item["item-e"] = SID{{1, 0}, 2};
  table.by_item["item-f"] = SID{{1, 1}, -1};
  for (const auto& [item, sid] : table.by_item) {
    table.by_path[sid.full_path()] = item;
  }
  return table;
}

SidTable solo_table() {
  SidTable table;
  table.H = 2;
  table.by_item["solo"] = SID{{0, 1}, -1};
  table.by_path[table.by_item["solo"].full_path()] = "solo";
  return table;
}

GenConfig small_config(int vocab_size) {
  GenConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.context = 32;
  return cfg;
}

double total_path_log_prob(const GenModelT<float>& model, const TokenSequence& x,
                           const std::vector<int>& gen_tokens) {
  std::vector<int> seq = x.tokens;
  double total = 0.0;
  for (int token : gen_tokens) {
    total += next_token_log_probs(model, seq)[token];
    seq.push_back(token);
  }
  return total;
}

Interest labeled_interest(const std::string& text, double confidence, int label) {
  Interest interest;
  interest.text = text;
  interest.confidence = confidence;
  interest.rldi_label = label;
  return interest;
}

std::vector<double> random_distribution(Rng& rng, int n) {
  std::vector<double> p(n);
  double total = 0.0;
  for (double& v : p) {
    v = rng.next_double() + 1e-3;
    total += v;
  }
  for (double& v : p) {
    v /= total;
  }
  return p;
}

// Matches the per-query rollout seed derivation inside grpo_step for query 0.
std::uint64_t derived_rollout_seed(std::uint64_t rollout_seed) {
  return fnv1a64("0", fnv1a64(std::to_string(rollout_seed)));
}

}  // namespace

TEST_CASE("item_label: majority vote with top-ranked tie break") {
  AggregatedInterests agg;
  agg.item_id = "x";

  SECTION("majority of ones wins") {
    agg.interests = {labeled_interest("a", 0.9, 1), labeled_interest("b", 0.8, 0),
                     labeled_interest("c", 0.7, 1)};
    CHECK(item_label(agg) == 1);
  }
  SECTION("majority of zeros wins") {
    agg.interests = {labeled_interest("a", 0.9, 0), labeled_interest("b", 0.8, 1),
                     labeled_interest("c", 0.7, 0)};
    CHECK(item_label(agg) == 0);
  }
  SECTION("tie follows the top-ranked labeled interest") {
    agg.interests = {labeled_interest("a", 0.9, 1), labeled_interest("b", 0.8, 0)};
    CHECK(item_label(agg) == 1);
    agg.interests = {labeled_interest("a", 0.9, 0), labeled_interest("b", 0.8, 1)};
    CHECK(item_label(agg) == 0);
  }
  SECTION("unlabeled interests are ignored") {
    agg.interests = {labeled_interest("a", 0.9, -1), labeled_interest("b", 0.8, 0),
                     labeled_interest("c", 0.7, -1)};
    CHECK(item_label(agg) == 0);
    agg.interests[1].rldi_label = 1;
    CHECK(item_label(agg) == 1);
  }
  SECTION("no labeled interests defaults to 0") {
    agg.interests = {labeled_interest("a", 0.9, -1)};
    CHECK(item_label(agg) == 0);
    agg.interests.clear();
    CHECK(item_label(agg) == 0);
  }
}

TEST_CASE("build_item_labels covers mined items; lookups default to 0") {
  AggregatedInterests pos, neg;
  pos.item_id = "item-a";
  pos.interests = {labeled_interest("hiking", 0.9, 1)};
  neg.item_id = "item-b";
  neg.interests = {labeled_interest("stuff", 0.9, 0)};
  auto labels = build_item_labels({pos, neg});
  CHECK(labels.label("item-a") == 1);
  CHECK(labels.label("item-b") == 0);
  CHECK(labels.label("never-mined") == 0);
}

TEST_CASE("compute_reward: rule_binary is the hit indicator") {
  auto table = toy_table();
  ItemLabelTable labels;
  RewardStrategy strategy;
  strategy.kind = "rule_binary";
  CHECK(compute_reward(strategy, table.by_item.at("item-a"), "item-a", "item-a", table,
                       labels) == 1.0);
  CHECK(compute_reward(strategy, table.by_item.at("item-b"), "item-b", "item-a", table,
                       labels) == 0.0);
}

TEST_CASE("compute_reward: prefix_match scores the shared code prefix over H") {
  auto table = toy_table();
  ItemLabelTable labels;
  RewardStrategy strategy;
  strategy.kind = "prefix_match";
  // item-a {0,0} vs item-b {0,1}: one shared level out of two.
  CHECK(compute_reward(strategy, table.by_item.at("item-a"), "item-a", "item-b", table,
                       labels) == 0.5);
  // item-a {0,0} vs item-f {1,1}: nothing shared.
  CHECK(compute_reward(strategy, table.by_item.at("item-a"), "item-a", "item-f", table,
                       labels) == 0.0);
  // Exact hit shares every level.
  CHECK(compute_reward(strategy, table.by_item.at("item-f"), "item-f", "item-f", table,
                       labels) == 1.0);
  // Collision siblings share the full code path even though the items differ.
  CHECK(compute_reward(strategy, table.by_item.at("item-c"), "item-c", "item-d", table,
                       labels) == 1.0);
}

TEST_CASE("compute_reward: interest_aware matches the alpha=0.5 value set") {
  auto table = toy_table();
  ItemLabelTable labels;
  labels.labels["item-a"] = 1;
  labels.labels["item-b"] = 0;
  RewardStrategy strategy;
  strategy.kind = "interest_aware";
  strategy.alpha = 0.5;

  // miss, predicted label 0
  CHECK(compute_reward(strategy, table.by_item.at("item-b"), "item-b", "item-a", table,
                       labels) == 0.0);
  // miss, predicted label 1
  CHECK(compute_reward(strategy, table.by_item.at("item-a"), "item-a", "item-b", table,
                       labels) == 0.5);
  // hit, label 0
  CHECK(compute_reward(strategy, table.by_item.at("item-b"), "item-b", "item-b", table,
                       labels) == 1.0);
  // hit, label 1
  CHECK(compute_reward(strategy, table.by_item.at("item-a"), "item-a", "item-a", table,
                       labels) == 1.5);

  SECTION("indicator can read the target item's label instead") {
    strategy.indicator_on_target = true;
    // miss, target item-a is labeled 1.
    CHECK(compute_reward(strategy, table.by_item.at("item-b"), "item-b", "item-a", table,
                         labels) == 0.5);
    // miss, target item-b is labeled 0.
    CHECK(compute_reward(strategy, table.by_item.at("item-a"), "item-a", "item-b", table,
                         labels) == 0.0);
  }
}

TEST_CASE("compute_reward: edge cases and contract failures") {
  auto table = toy_table();
  ItemLabelTable labels;
  RewardStrategy strategy;
  strategy.kind = "rule_binary";

  SECTION("generated item outside the table scores 0") {
    CHECK(compute_reward(strategy, SID{{0, 0}, -1}, "ghost", "item-a", table, labels) ==
          0.0);
    CHECK(compute_reward(strategy, SID{{0, 0}, -1}, "", "item-a", table, labels) == 0.0);
  }
  SECTION("target must have a SID") {
    CHECK_THROWS_MATCHES(
        compute_reward(strategy, table.by_item.at("item-a"), "item-a", "ghost", table,
                       labels),
        Error, ErrorKindIs(ErrorKind::contract));
  }
  SECTION("unknown strategy kind is a config error") {
    strategy.kind = "dense";
    CHECK_THROWS_MATCHES(
        compute_reward(strategy, table.by_item.at("item-a"), "item-a", "item-a", table,
                       labels),
        Error, ErrorKindIs(ErrorKind::config));
  }
}

TEST_CASE("normalize_advantages: hand-checked group") {
  auto adv = normalize_advantages({1.5, 1.0, 0.5, 0.0});
  REQUIRE(adv.size() == 4);
  CHECK(adv[0] == Catch::Approx(1.3416).margin(1e-3));
  CHECK(adv[1] == Catch::Approx(0.4472).margin(1e-3));
  CHECK(adv[2] == Catch::Approx(-0.4472).margin(1e-3));
  CHECK(adv[3] == Catch::Approx(-1.3416).margin(1e-3));
}

TEST_CASE("normalize_advantages: degenerate and simple groups") {
  SECTION("all-equal rewards give exactly zero advantages") {
    auto adv = normalize_advantages({0.7, 0.7, 0.7, 0.7, 0.7});
    for (double a : adv) {
      CHECK(a == 0.0);
    }
  }
  SECTION("two-element group") {
    auto adv = normalize_advantages({1.0, 0.0});
    CHECK(adv[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(adv[1] == Catch::Approx(-1.0).margin(1e-12));
  }
  SECTION("groups smaller than 2 are rejected") {
    CHECK_THROWS_MATCHES(normalize_advantages({1.0}), Error,
                         ErrorKindIs(ErrorKind::contract));
  }
}

TEST_CASE("normalize_advantages: normalization and shift invariance properties") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> rewards(2 + rng.next_below(14));
    for (double& r : rewards) {
      r = 3.0 * rng.next_double() - 1.0;
    }
    auto adv = normalize_advantages(rewards);
    double mean = 0.0, var = 0.0;
    for (double a : adv) {
      mean += a;
    }
    mean /= static_cast<double>(adv.size());
    for (double a : adv) {
      var += (a - mean) * (a - mean);
    }
    var /= static_cast<double>(adv.size());
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);

    std::vector<double> shifted = rewards;
    for (double& r : shifted) {
      r += 11.25;
    }
    auto shifted_adv = normalize_advantages(shifted);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      CHECK(std::abs(shifted_adv[i] - adv[i]) < 1e-8);
    }
  }
}

TEST_CASE("categorical_kl: hand value, identity, and non-negativity") {
  SECTION("two-token hand computation") {
    const double expected = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    CHECK(categorical_kl({0.5, 0.5}, {0.9, 0.1}) ==
          Catch::Approx(0.5108).margin(1e-4));
    CHECK(categorical_kl({0.5, 0.5}, {0.9, 0.1}) == Catch::Approx(expected));
  }
  SECTION("identical distributions give exactly zero") {
    std::vector<double> p = {0.2, 0.3, 0.5};
    CHECK(categorical_kl(p, p) == 0.0);
  }
  SECTION("zero policy mass contributes nothing") {
    CHECK(categorical_kl({0.0, 1.0}, {0.5, 0.5}) ==
          Catch::Approx(std::log(2.0)));
  }
  SECTION("zero reference mass under policy support is a numerical error") {
    CHECK_THROWS_MATCHES(categorical_kl({0.5, 0.5}, {1.0, 0.0}), Error,
                         ErrorKindIs(ErrorKind::numerical));
  }
  SECTION("size mismatch is a contract error") {
    CHECK_THROWS_MATCHES(categorical_kl({1.0}, {0.5, 0.5}), Error,
                         ErrorKindIs(ErrorKind::contract));
  }
  SECTION("non-negative on 100 random pairs") {
    Rng rng(55);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 2 + static_cast<int>(rng.next_below(9));
      auto p = random_distribution(rng, n);
      auto q = random_distribution(rng, n);
      CHECK(categorical_kl(p, q) >= 0.0);
    }
  }
}

TEST_CASE("kl_penalty: zero against an identical reference, positive otherwise") {
  auto table = toy_table();
  auto vocab = Vocab::for_table(table);
  GenModelT<float> policy(small_config(vocab.size()));
  policy.init(3);

  TokenSequence seq = build_training_sequence(table, vocab, {"item-b"}, "item-a", 8);

  SECTION("identical parameters") {
    GenModelT<float> reference = policy;
    CHECK(kl_penalty(policy, reference, seq) < 1e-9);
  }
  SECTION("different parameters") {
    GenModelT<float> reference(small_config(vocab.size()));
    reference.init(4);
    CHECK(kl_penalty(policy, reference, seq) > 0.0);
  }
  SECTION("vocabulary mismatch is a contract error") {
    GenModelT<float> reference(small_config(vocab.size() + 1));
    reference.init(4);
    CHECK_THROWS_MATCHES(kl_penalty(policy, reference, seq), Error,
                         ErrorKindIs(ErrorKind::contract));
  }
}

TEST_CASE("validate_rl_config rejects out-of-range settings") {
  RLConfig cfg;
  validate_rl_config(cfg);
  SECTION("G") {
    cfg.G = 1;
    CHECK_THROWS_MATCHES(validate_rl_config(cfg), Error, ErrorKindIs(ErrorKind::config));
  }
  SECTION("temperature") {
    cfg.temperature = 0.0;
    CHECK_THROWS_MATCHES(validate_rl_config(cfg), Error, ErrorKindIs(ErrorKind::config));
  }
  SECTION("beta") {
    cfg.beta = -0.1;
    CHECK_THROWS_MATCHES(validate_rl_config(cfg), Error, ErrorKindIs(ErrorKind::config));
  }
  SECTION("optimizer") {
    cfg.optimizer = "momentum";
    CHECK_THROWS_MATCHES(validate_rl_config(cfg), Error, ErrorKindIs(ErrorKind::config));
  }
}

TEST_CASE("grpo_step: uniform rewards with an identical reference leave the policy fixed") {
  // A one-item trie makes every rollout a hit: rewards are uniform, advantages
  // vanish, and with policy == reference the KL gradient vanishes too.
  auto table = solo_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenModelT<float> policy(small_config(vocab.size()));
  policy.init(5);
  GenModelT<float> reference = policy;
  const auto before = policy.params;

  ItemLabelTable labels;
  RewardStrategy strategy;
  strategy.kind = "rule_binary";
  RLConfig cfg;
  cfg.G = 4;
  cfg.temperature = 1.0;
  cfg.beta = 0.1;
  cfg.lr = 0.05;
  AdamState opt;

  std::vector<RLQuery> queries = {{encode_history(table, vocab, {"solo"}, 4), "solo"}};
  auto metrics = grpo_step(policy, reference, queries, trie, vocab, strategy, labels,
                           table, cfg, opt, 7);

  CHECK(metrics.mean_reward == 1.0);
  CHECK(metrics.rollout_hit_rate == 1.0);
  CHECK(metrics.group_any_hit_rate == 1.0);
  CHECK(metrics.mean_advantage == 0.0);
  CHECK(metrics.mean_kl < 1e-9);
  CHECK(policy.params == before);
}

TEST_CASE("grpo_step: with zero advantages the update is driven by the KL term alone") {
  auto table = solo_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenModelT<float> policy(small_config(vocab.size()));
  policy.init(5);
  GenModelT<float> reference(small_config(vocab.size()));
  reference.init(6);

  ItemLabelTable labels;
  RewardStrategy strategy;
  strategy.kind = "rule_binary";
  RLConfig cfg;
  cfg.G = 4;
  cfg.temperature = 1.0;
  cfg.beta = 1.0;
  cfg.lr = 2e-3;
  AdamState opt;

  TokenSequence probe = build_training_sequence(table, vocab, {"solo"}, "solo", 4);
  const double kl_before = kl_penalty(policy, reference, probe);
  REQUIRE(kl_before > 0.0);

  std::vector<RLQuery> queries = {{encode_history(table, vocab, {"solo"}, 4), "solo"}};
  const auto params_before = policy.params;
  for (int step = 0; step < 25; ++step) {
    auto metrics = grpo_step(policy, reference, queries, trie, vocab, strategy, labels,
                             table, cfg, opt, 100 + step);
    CHECK(metrics.mean_advantage == 0.0);
  }
  CHECK(policy.params != params_before);
  CHECK(kl_penalty(policy, reference, probe) < kl_before);
}

TEST_CASE("grpo_step: beta=0 is an ascent step on the sampled surrogate") {
  auto table = toy_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenModelT<float> model(small_config(vocab.size()));
  model.init(11);

  // Warm the policy toward the target so rollouts mix hits and misses.
  SftCfg sft;
  sft.epochs = 30;
  sft.batch_size = 1;
  sft.lr = 3e-3;
  sft.seed = 1;
  auto warm = sft_train_sequences(
      model, {build_training_sequence(table, vocab, {"item-b"}, "item-a", 8)}, sft);
  GenModelT<float> policy = warm.model;
  GenModelT<float> reference = policy;

  ItemLabelTable labels;
  RewardStrategy strategy;
  strategy.kind = "rule_binary";
  RLConfig cfg;
  cfg.G = 10;
  cfg.temperature = 1.0;
  cfg.beta = 0.0;
  cfg.lr = 0.05;
  cfg.optimizer = "sgd";
  AdamState opt;

  TokenSequence x = encode_history(table, vocab, {"item-b"}, 8);
  std::vector<RLQuery> queries = {{x, "item-a"}};

  for (int step = 0; step < 5; ++step) {
    // Pick a rollout seed whose group mixes hits and misses under the current
    // policy, so the normalized advantages are non-degenerate.
    std::uint64_t rollout_seed = 0;
    bool found = false;
    for (std::uint64_t candidate = 0; candidate < 200 && !found; ++candidate) {
      auto rollouts = sample_rollouts(policy, x, trie, vocab, cfg.G, cfg.temperature,
                                      derived_rollout_seed(candidate));
      int hits = 0;
      for (const auto& r : rollouts) {
        hits += r.item_id == "item-a" ? 1 : 0;
      }
      if (hits > 0 && hits < cfg.G) {
        rollout_seed = candidate;
        found = true;
      }
    }
    REQUIRE(found);

    // Recreate the exact rollouts grpo_step will draw and score the surrogate
    // sum_j A_j * log pi(y_j | x) before and after the update: a small SGD
    // step along its gradient must strictly increase it.
    auto rollouts = sample_rollouts(policy, x, trie, vocab, cfg.G, cfg.temperature,
                                    derived_rollout_seed(rollout_seed));
    std::vector<double> rewards;
    for (const auto& r : rollouts) {
      rewards.push_back(compute_reward(strategy, table.by_item.at(r.item_id), r.item_id,
                                       "item-a", table, labels));
    }
    const auto advantages = normalize_advantages(rewards, cfg.std_epsilon);
    const auto surrogate = [&]() {
      double total = 0.0;
      for (std::size_t j = 0; j < rollouts.size(); ++j) {
        total += advantages[j] * total_path_log_prob(policy, x, rollouts[j].tokens);
      }
      return total;
    };
    const double before = surrogate();
    grpo_step(policy, reference, queries, trie, vocab, strategy, labels, table, cfg, opt,
              rollout_seed);
    CHECK(surrogate() > before);
  }
}

TEST_CASE("grpo_step: gradient reduction is invariant to the thread count") {
  auto table = toy_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenModelT<float> base(small_config(vocab.size()));
  base.init(13);
  GenModelT<float> reference(small_config(vocab.size()));
  reference.init(14);

  ItemLabelTable labels;
  labels.labels["item-a"] = 1;
  RewardStrategy strategy;
  RLConfig cfg;
  cfg.G = 4;
  cfg.beta = 0.01;
  cfg.lr = 1e-3;

  std::vector<RLQuery> queries = {
      {encode_history(table, vocab, {"item-b"}, 8), "item-a"},
      {encode_history(table, vocab, {"item-c", "item-f"}, 8), "item-d"},
      {encode_history(table, vocab, {"item-a"}, 8), "item-e"},
  };

  GenModelT<float> serial = base;
  GenModelT<float> threaded = base;
  AdamState opt1, opt3;
  cfg.threads = 1;
  auto m1 = grpo_step(serial, reference, queries, trie, vocab, strategy, labels, table,
                      cfg, opt1, 21);
  cfg.threads = 3;
  auto m3 = grpo_step(threaded, reference, queries, trie, vocab, strategy, labels, table,
                      cfg, opt3, 21);
  CHECK(serial.params == threaded.params);
  CHECK(m1.mean_reward == m3.mean_reward);
  CHECK(m1.loss == m3.loss);
}

TEST_CASE("grpo_step: non-finite loss aborts with a training error") {
  auto table = solo_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenModelT<float> policy(small_config(vocab.size()));
  policy.init(5);
  GenModelT<float> reference = policy;
  policy.data("wout")[0] = std::numeric_limits<float>::quiet_NaN();

  ItemLabelTable labels;
  RewardStrategy strategy;
  strategy.kind = "rule_binary";
  RLConfig cfg;
  cfg.G = 2;
  AdamState opt;
  std::vector<RLQuery> queries = {{encode_history(table, vocab, {"solo"}, 4), "solo"}};
  CHECK_THROWS_MATCHES(grpo_step(policy, reference, queries, trie, vocab, strategy,
                                 labels, table, cfg, opt, 1),
                       Error, ErrorKindIs(ErrorKind::training));
}

namespace {

SplitDataset toy_split() {
  SplitDataset data;
  data.train = {
      {"u1", {"item-b", "item-c"}, "item-a"},
      {"u2", {"item-a", "item-f"}, "item-b"},
      {"u3", {"item-d"}, "item-f"},
      {"u4", {"item-e", "item-a", "item-b"}, "item-c"},
      {"u5", {"item-f", "item-b"}, "item-d"},
      {"u6", {"item-c", "item-d"}, "item-e"},
  };
  for (const auto& [item, sid] : toy_table().by_item) {
    data.item_universe.insert(item);
  }
  return data;
}

}  // namespace

TEST_CASE("grpo_train: zero epochs returns the policy untouched") {
  auto table = toy_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenModelT<float> policy(small_config(vocab.size()));
  policy.init(17);
  GenModelT<float> reference = policy;
  const auto before = policy.params;

  RLConfig cfg;
  cfg.epochs = 0;
  cfg.G = 4;
  cfg.n_hist = 8;
  auto result = grpo_train(policy, reference, toy_split(), table, trie, vocab,
                           RewardStrategy{}, ItemLabelTable{}, cfg);
  CHECK(result.policy.params == before);
  CHECK(result.curve.empty());
  CHECK(result.epoch_mean_reward.empty());
}

TEST_CASE("grpo_train: curve shape, determinism, and a frozen reference") {
  auto table = toy_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenModelT<float> policy(small_config(vocab.size()));
  policy.init(17);
  GenModelT<float> reference = policy;
  const auto reference_before = reference.params;

  ItemLabelTable labels;
  labels.labels["item-a"] = 1;
  labels.labels["item-d"] = 1;
  RewardStrategy strategy;
  RLConfig cfg;
  cfg.G = 4;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.lr = 1e-3;
  cfg.beta = 0.01;
  cfg.seed = 3;
  cfg.n_hist = 8;

  auto run1 = grpo_train(policy, reference, toy_split(), table, trie, vocab, strategy,
                         labels, cfg);
  auto run2 = grpo_train(policy, reference, toy_split(), table, trie, vocab, strategy,
                         labels, cfg);

  // 6 queries, batches of 2, 2 epochs.
  REQUIRE(run1.curve.size() == 6);
  REQUIRE(run1.epoch_mean_reward.size() == 2);
  for (std::size_t i = 0; i < run1.curve.size(); ++i) {
    CHECK(run1.curve[i].step == static_cast<long long>(i) + 1);
    CHECK(run1.curve[i].mean_reward >= 0.0);
    CHECK(run1.curve[i].mean_kl >= -1e-12);
    CHECK(run1.curve[i].group_hit_rate >= 0.0);
    CHECK(run1.curve[i].group_hit_rate <= 1.0);
  }

  CHECK(run1.policy.params == run2.policy.params);
  for (std::size_t i = 0; i < run1.curve.size(); ++i) {
    CHECK(run1.curve[i].mean_reward == run2.curve[i].mean_reward);
    CHECK(run1.curve[i].mean_kl == run2.curve[i].mean_kl);
  }
  CHECK(reference.params == reference_before);
  CHECK(run1.policy.params != policy.params);
}

TEST_CASE("grpo_train: queries_per_epoch caps the per-epoch workload") {
  auto table = toy_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenModelT<float> policy(small_config(vocab.size()));
  policy.init(17);
  GenModelT<float> reference = policy;

  RLConfig cfg;
  cfg.G = 4;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.queries_per_epoch = 2;
  cfg.n_hist = 8;
  auto result = grpo_train(policy, reference, toy_split(), table, trie, vocab,
                           RewardStrategy{}, ItemLabelTable{}, cfg);
  // 2 queries per epoch in one batch of 2, over 2 epochs.
  CHECK(result.curve.size() == 2);
  CHECK(result.epoch_mean_reward.size() == 2);
}

TEST_CASE("grpo_train: histories that cannot fit the context fail fast") {
  auto table = toy_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenConfig tight = small_config(vocab.size());
  tight.context = 8;
  GenModelT<float> policy(tight);
  policy.init(17);
  GenModelT<float> reference = policy;

  SplitDataset data;
  // Three collision items at three tokens each, plus BOS: ten tokens of
  // history leave no room for an H+1 generation in a context of eight.
  data.train = {{"u-long", {"item-c", "item-d", "item-e"}, "item-a"}};
  RLConfig cfg;
  cfg.G = 4;
  cfg.n_hist = 8;
  try {
    grpo_train(policy, reference, data, table, trie, vocab, RewardStrategy{},
               ItemLabelTable{}, cfg);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    CHECK(std::string(e.what()).find("u-long") != std::string::npos);
  }
}

TEST_CASE("grpo_train: mismatched policy and reference configs are rejected") {
  auto table = toy_table();
  auto vocab = Vocab::for_table(table);
  auto trie = build_trie(table);
  GenModelT<float> policy(small_config(vocab.size()));
  policy.init(17);
  GenConfig other = small_config(vocab.size());
  other.d_model = 8;
  GenModelT<float> reference(other);
  reference.init(17);

  RLConfig cfg;
  cfg.G = 4;
  cfg.n_hist = 8;
  CHECK_THROWS_MATCHES(grpo_train(policy, reference, toy_split(), table, trie, vocab,
                                  RewardStrategy{}, ItemLabelTable{}, cfg),
                       Error, ErrorKindIs(ErrorKind::contract));
}
