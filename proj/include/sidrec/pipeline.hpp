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
// End-to-end pipeline: configuration, artifact bookkeeping with content-hash
// stamps, the stage chain (corpus → mine → embed → tokenize → sft → rl →
// eval), ablation arms, and the cross-corpus transfer harness.

#ifndef SIDREC_PIPELINE_HPP
#define SIDREC_PIPELINE_HPP

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/corpus.hpp"
#include "sidrec/decode.hpp"
#include "sidrec/embed.hpp"
#include "sidrec/genmodel.hpp"
#include "sidrec/interests.hpp"
#include "sidrec/jsonl.hpp"
#include "sidrec/llm_client.hpp"
#include "sidrec/metrics.hpp"
#include "sidrec/mining.hpp"
#include "sidrec/prompts.hpp"
#include "sidrec/rl.hpp"
#include "sidrec/synthetic.hpp"
#include "sidrec/tokenizer.hpp"
#include "sidrec/vocab.hpp"

namespace sidrec {

// ---- Config section serialization -----------------------------------------

inline Json synth_config_to_json(const SynthConfig& c) {
  return Json{{"users", c.users},
              {"items", c.items},
              {"topics", c.topics},
              {"min_seq_len", c.min_seq_len},
              {"max_seq_len", c.max_seq_len},
              {"primary_weight", c.primary_weight},
              {"noise", c.noise},
              {"zipf_exponent", c.zipf_exponent},
              {"max_topics_per_item", c.max_topics_per_item},
              {"caption_fraction", c.caption_fraction},
              {"topic_offset", c.topic_offset}};
}

inline SynthConfig synth_config_from_json(const Json& j) {
  SynthConfig c;
  c.users = j.value("users", c.users);
  c.items = j.value("items", c.items);
  c.topics = j.value("topics", c.topics);
  c.min_seq_len = j.value("min_seq_len", c.min_seq_len);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.primary_weight = j.value("primary_weight", c.primary_weight);
  c.noise = j.value("noise", c.noise);
  c.zipf_exponent = j.value("zipf_exponent", c.zipf_exponent);
  c.max_topics_per_item = j.value("max_topics_per_item", c.max_topics_per_item);
  c.caption_fraction = j.value("caption_fraction", c.caption_fraction);
  c.topic_offset = j.value("topic_offset", c.topic_offset);
  return c;
}

inline Json sft_cfg_to_json(const SftCfg& c) {
  return Json{{"epochs", c.epochs},   {"batch_size", c.batch_size},
              {"lr", c.lr},           {"optimizer", c.optimizer},
              {"seed", c.seed},       {"n_hist", c.n_hist},
              {"threads", c.threads}};
}

inline SftCfg sft_cfg_from_json(const Json& j) {
  SftCfg c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.seed = j.value("seed", c.seed);
  c.n_hist = j.value("n_hist", c.n_hist);
  c.threads = j.value("threads", c.threads);
  return c;
}

inline Json rl_config_to_json(const RLConfig& c) {
  return Json{{"G", c.G},
              {"temperature", c.temperature},
              {"beta", c.beta},
              {"lr", c.lr},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"std_epsilon", c.std_epsilon},
              {"seed", c.seed},
              {"n_hist", c.n_hist},
              {"threads", c.threads},
              {"optimizer", c.optimizer},
              {"queries_per_epoch", c.queries_per_epoch}};
}

inline RLConfig rl_config_from_json(const Json& j) {
  RLConfig c;
  c.G = j.value("G", c.G);
  c.temperature = j.value("temperature", c.temperature);
  c.beta = j.value("beta", c.beta);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.std_epsilon = j.value("std_epsilon", c.std_epsilon);
  c.seed = j.value("seed", c.seed);
  c.n_hist = j.value("n_hist", c.n_hist);
  c.threads = j.value("threads", c.threads);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.queries_per_epoch = j.value("queries_per_epoch", c.queries_per_epoch);
  return c;
}

inline Json reward_strategy_to_json(const RewardStrategy& s) {
  return Json{{"kind", s.kind},
              {"alpha", s.alpha},
              {"indicator_on_target", s.indicator_on_target}};
}

inline RewardStrategy reward_strategy_from_json(const Json& j) {
  RewardStrategy s;
  s.kind = j.value("kind", s.kind);
  s.alpha = j.value("alpha", s.alpha);
  s.indicator_on_target = j.value("indicator_on_target", s.indicator_on_target);
  return s;
}

inline Json eval_config_to_json(const EvalConfig& c) {
  return Json{{"beam", c.beam}, {"Ks", c.Ks}, {"n_hist", c.n_hist},
              {"threads", c.threads}};
}

inline EvalConfig eval_config_from_json(const Json& j) {
  EvalConfig c;
  c.beam = j.value("beam", c.beam);
  if (j.contains("Ks")) c.Ks = j.at("Ks").get<std::vector<int>>();
  c.n_hist = j.value("n_hist", c.n_hist);
  c.threads = j.value("threads", c.threads);
  return c;
}

inline Json embed_config_to_json(const EmbedConfig& c) {
  Json j{{"kind", c.kind}, {"dim", c.dim}, {"seed", c.seed},
         {"response_path", c.response_path}};
  if (c.kind == "remote") j["provider"] = provider_config_to_json(c.provider);
  return j;
}

// ---- Pipeline configuration ------------------------------------------------

inline const std::vector<std::string>& ablation_arms() {
  static const std::vector<std::string> arms = {"full", "no_mlim", "no_ieid",
                                                "no_interest_reward", "sft_only"};
  return arms;
}

struct TokenizerSection {
  int H = 4;
  int K = 256;
  int max_iters = 100;
  std::uint64_t seed = 1;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::string source = "synthetic";  // "synthetic" | "file"
  std::string arm = "full";
  std::string reviews_path;
  std::string metadata_path;
  std::string workdir = "work";
  int kcore = 5;
  SynthConfig synth;
  std::vector<ProviderConfig> providers;
  int rldi_provider_index = 0;
  double merge_threshold = 0.85;
  std::string prompts_dir;
  EmbedConfig embed;
  TokenizerSection tokenizer;
  GenConfig model;  // vocab_size resolved from the SID table at training time
  SftCfg sft;
  RLConfig rl;
  RewardStrategy reward;
  EvalConfig eval;
  int threads = 1;
  std::optional<SynthConfig> transfer_synth;
  std::uint64_t transfer_seed = 8;
};

inline PipelineConfig default_pipeline_config() {
  PipelineConfig cfg;
  ProviderConfig a, b;
  a.provider_id = "mock-a";
  a.kind = "mock";
  a.mock_seed = 11;
  b.provider_id = "mock-b";
  b.kind = "mock";
  b.mock_seed = 22;
  cfg.providers = {a, b};
  return cfg;
}

inline Json pipeline_config_to_json(const PipelineConfig& cfg) {
  Json providers = Json::array();
  for (const auto& p : cfg.providers) {
    providers.push_back(provider_config_to_json(p));
  }
  Json j{{"seed", cfg.seed},
         {"source", cfg.source},
         {"arm", cfg.arm},
         {"paths",
          {{"reviews", cfg.reviews_path},
           {"metadata", cfg.metadata_path},
           {"workdir", cfg.workdir}}},
         {"corpus", {{"kcore", cfg.kcore}}},
         {"synthetic", synth_config_to_json(cfg.synth)},
         {"providers", providers},
         {"rldi_provider_index", cfg.rldi_provider_index},
         {"mining", {{"merge_threshold", cfg.merge_threshold}}},
         {"prompts_dir", cfg.prompts_dir},
         {"embed", embed_config_to_json(cfg.embed)},
         {"model", gen_config_to_json(cfg.model)},
         {"sft", sft_cfg_to_json(cfg.sft)},
         {"rl", rl_config_to_json(cfg.rl)},
         {"reward", reward_strategy_to_json(cfg.reward)},
         {"eval", eval_config_to_json(cfg.eval)},
         {"tokenizer",
          {{"H", cfg.tokenizer.H},
           {"K", cfg.tokenizer.K},
           {"max_iters", cfg.tokenizer.max_iters},
           {"seed", cfg.tokenizer.seed}}},
         {"threads", cfg.threads}};
  if (cfg.transfer_synth.has_value()) {
    j["transfer"] = {{"synthetic", synth_config_to_json(*cfg.transfer_synth)},
                     {"seed", cfg.transfer_seed}};
  }
  return j;
}

inline PipelineConfig pipeline_config_from_json(const Json& j) {
  PipelineConfig cfg = default_pipeline_config();
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.source = j.value("source", cfg.source);
    cfg.arm = j.value("arm", cfg.arm);
    if (j.contains("paths")) {
      const Json& p = j.at("paths");
      cfg.reviews_path = p.value("reviews", cfg.reviews_path);
      cfg.metadata_path = p.value("metadata", cfg.metadata_path);
      cfg.workdir = p.value("workdir", cfg.workdir);
    }
    if (j.contains("corpus")) cfg.kcore = j.at("corpus").value("kcore", cfg.kcore);
    if (j.contains("synthetic")) cfg.synth = synth_config_from_json(j.at("synthetic"));
    if (j.contains("providers")) {
      cfg.providers.clear();
      for (const auto& p : j.at("providers")) {
        cfg.providers.push_back(provider_config_from_json(p));
      }
    }
    cfg.rldi_provider_index = j.value("rldi_provider_index", cfg.rldi_provider_index);
    if (j.contains("mining")) {
      cfg.merge_threshold = j.at("mining").value("merge_threshold", cfg.merge_threshold);
    }
    cfg.prompts_dir = j.value("prompts_dir", cfg.prompts_dir);
    if (j.contains("embed")) cfg.embed = embed_config_from_json(j.at("embed"));
    if (j.contains("model")) {
      const Json& m = j.at("model");
      // vocab_size is resolved from the SID table when training starts.
      cfg.model.vocab_size = m.value("vocab_size", 0);
      cfg.model.d_model = m.value("d_model", cfg.model.d_model);
      cfg.model.n_layers = m.value("n_layers", cfg.model.n_layers);
      cfg.model.n_heads = m.value("n_heads", cfg.model.n_heads);
      cfg.model.context = m.value("context", cfg.model.context);
    }
    if (j.contains("sft")) cfg.sft = sft_cfg_from_json(j.at("sft"));
    if (j.contains("rl")) cfg.rl = rl_config_from_json(j.at("rl"));
    if (j.contains("reward")) cfg.reward = reward_strategy_from_json(j.at("reward"));
    if (j.contains("eval")) cfg.eval = eval_config_from_json(j.at("eval"));
    if (j.contains("tokenizer")) {
      const Json& t = j.at("tokenizer");
      cfg.tokenizer.H = t.value("H", cfg.tokenizer.H);
      cfg.tokenizer.K = t.value("K", cfg.tokenizer.K);
      cfg.tokenizer.max_iters = t.value("max_iters", cfg.tokenizer.max_iters);
      cfg.tokenizer.seed = t.value("seed", cfg.tokenizer.seed);
    }
    cfg.threads = j.value("threads", cfg.threads);
    if (j.contains("transfer")) {
      const Json& t = j.at("transfer");
      cfg.transfer_synth =
          synth_config_from_json(t.contains("synthetic") ? t.at("synthetic") : Json::object());
      cfg.transfer_seed = t.value("seed", cfg.transfer_seed);
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::config, std::string("pipeline config: malformed JSON: ") + e.what());
  }
  return cfg;
}

// Every violated field, so one failed run reports the whole set of problems.
inline std::vector<std::string> pipeline_config_violations(const PipelineConfig& cfg) {
  std::vector<std::string> v;
  const auto check = [&](bool ok, const std::string& message) {
    if (!ok) v.push_back(message);
  };
  check(cfg.source == "synthetic" || cfg.source == "file",
        "source: must be 'synthetic' or 'file'");
  bool known_arm = false;
  for (const auto& arm : ablation_arms()) {
    known_arm = known_arm || arm == cfg.arm;
  }
  check(known_arm, "arm: unknown arm '" + cfg.arm + "'");
  check(!cfg.workdir.empty(), "paths.workdir: must not be empty");
  if (cfg.source == "file") {
    check(!cfg.reviews_path.empty() && std::filesystem::exists(cfg.reviews_path),
          "paths.reviews: file does not exist: '" + cfg.reviews_path + "'");
    check(!cfg.metadata_path.empty() && std::filesystem::exists(cfg.metadata_path),
          "paths.metadata: file does not exist: '" + cfg.metadata_path + "'");
    check(cfg.kcore >= 1, "corpus.kcore: must be at least 1");
  } else {
    check(cfg.synth.users >= 1, "synthetic.users: must be at least 1");
    check(cfg.synth.items >= 1, "synthetic.items: must be at least 1");
    check(cfg.synth.topics >= 1, "synthetic.topics: must be at least 1");
    check(cfg.synth.min_seq_len >= 3, "synthetic.min_seq_len: must be at least 3");
    check(cfg.synth.max_seq_len >= cfg.synth.min_seq_len,
          "synthetic.max_seq_len: must be >= min_seq_len");
  }
  check(!cfg.providers.empty(), "providers: at least one provider required");
  for (std::size_t i = 0; i < cfg.providers.size(); ++i) {
    try {
      validate_provider_config(cfg.providers[i]);
    } catch (const Error& e) {
      v.push_back("providers[" + std::to_string(i) + "]: " + e.what());
    }
  }
  check(cfg.rldi_provider_index >= 0 &&
            cfg.rldi_provider_index < static_cast<int>(cfg.providers.size()),
        "rldi_provider_index: out of range");
  check(cfg.merge_threshold > 0.0 && cfg.merge_threshold <= 1.0,
        "mining.merge_threshold: must be in (0, 1]");
  check(cfg.prompts_dir.empty() || std::filesystem::exists(cfg.prompts_dir),
        "prompts_dir: directory does not exist: '" + cfg.prompts_dir + "'");
  check(cfg.tokenizer.H >= 1, "tokenizer.H: must be at least 1");
  check(cfg.tokenizer.K >= 2, "tokenizer.K: must be at least 2");
  check(cfg.tokenizer.max_iters >= 1, "tokenizer.max_iters: must be at least 1");
  try {
    GenConfig m = cfg.model;
    m.vocab_size = 4;  // resolved later from the SID table
    validate_gen_config(m);
  } catch (const Error& e) {
    v.push_back(std::string("model: ") + e.what());
  }
  try {
    validate_sft_cfg(cfg.sft);
  } catch (const Error& e) {
    v.push_back(std::string("sft: ") + e.what());
  }
  try {
    validate_rl_config(cfg.rl);
  } catch (const Error& e) {
    v.push_back(std::string("rl: ") + e.what());
  }
  try {
    validate_reward_strategy(cfg.reward);
  } catch (const Error& e) {
    v.push_back(std::string("reward: ") + e.what());
  }
  try {
    validate_eval_config(cfg.eval);
  } catch (const Error& e) {
    v.push_back(std::string("eval: ") + e.what());
  }
  check(cfg.threads >= 1, "threads: must be at least 1");
  if (cfg.transfer_synth.has_value()) {
    check(cfg.transfer_synth->users >= 1, "transfer.synthetic.users: must be at least 1");
    check(cfg.transfer_synth->min_seq_len >= 3,
          "transfer.synthetic.min_seq_len: must be at least 3");
  }
  return v;
}

inline void validate_pipeline_config(const PipelineConfig& cfg) {
  const auto violations = pipeline_config_violations(cfg);
  if (violations.empty()) {
    return;
  }
  std::string message = "invalid pipeline config (" +
                        std::to_string(violations.size()) + " problem(s)):";
  for (const auto& violation : violations) {
    message += "\n  - " + violation;
  }
  fail(ErrorKind::config, message);
}

inline std::string config_hash(const PipelineConfig& cfg) {
  return hex64(fnv1a64(pipeline_config_to_json(cfg).dump()));
}

// ---- Stage fingerprints ----------------------------------------------------
//
// Each stage hashes only the configuration that can change its output, chained
// with its upstream stage's fingerprint. A stage is fresh when its recorded
// fingerprint, input hashes, and outputs all still match.

namespace detail {

inline std::string fp(const Json& j, const std::string& upstream = {}) {
  return hex64(fnv1a64(j.dump(), fnv1a64(upstream)));
}

}  // namespace detail

// Arms built on shallow embeddings bypass interest-conditioned SIDs.
inline std::string arm_embedding_source(const std::string& arm) {
  return arm == "no_mlim" || arm == "no_ieid" ? "shallow" : "deep";
}

// Arms that strip the interest term fall back to the plain hit reward.
inline RewardStrategy arm_reward(const std::string& arm, RewardStrategy configured) {
  if (arm == "no_interest_reward" || arm == "no_mlim") {
    configured.kind = "rule_binary";
  }
  return configured;
}

inline std::string stage_fingerprint(const PipelineConfig& cfg, const std::string& stage) {
  Json providers = Json::array();
  for (const auto& p : cfg.providers) {
    providers.push_back(provider_config_to_json(p));
  }
  if (stage == "corpus") {
    return detail::fp(Json{{"seed", cfg.seed},
                           {"source", cfg.source},
                           {"reviews", cfg.reviews_path},
                           {"metadata", cfg.metadata_path},
                           {"kcore", cfg.kcore},
                           {"synthetic", synth_config_to_json(cfg.synth)}});
  }
  if (stage == "mine") {
    return detail::fp(Json{{"providers", providers},
                           {"rldi_provider_index", cfg.rldi_provider_index},
                           {"merge_threshold", cfg.merge_threshold},
                           {"prompts_dir", cfg.prompts_dir},
                           {"embed", embed_config_to_json(cfg.embed)}},
                      stage_fingerprint(cfg, "corpus"));
  }
  if (stage == "embed") {
    return detail::fp(Json{{"embed", embed_config_to_json(cfg.embed)}},
                      stage_fingerprint(cfg, "mine"));
  }
  if (stage == "tokenize") {
    return detail::fp(Json{{"H", cfg.tokenizer.H},
                           {"K", cfg.tokenizer.K},
                           {"max_iters", cfg.tokenizer.max_iters},
                           {"seed", cfg.tokenizer.seed},
                           {"embedding_source", arm_embedding_source(cfg.arm)}},
                      stage_fingerprint(cfg, "embed"));
  }
  if (stage == "sft") {
    return detail::fp(Json{{"model", gen_config_to_json(cfg.model)},
                           {"sft", sft_cfg_to_json(cfg.sft)}},
                      stage_fingerprint(cfg, "tokenize"));
  }
  if (stage == "rl") {
    return detail::fp(
        Json{{"rl", rl_config_to_json(cfg.rl)},
             {"reward", reward_strategy_to_json(arm_reward(cfg.arm, cfg.reward))},
             {"mine", stage_fingerprint(cfg, "mine")}},
        stage_fingerprint(cfg, "sft"));
  }
  if (stage == "eval") {
    const std::string upstream =
        cfg.arm == "sft_only" ? stage_fingerprint(cfg, "sft")
                              : stage_fingerprint(cfg, "rl");
    return detail::fp(Json{{"eval", eval_config_to_json(cfg.eval)},
                           {"arm", cfg.arm},
                           {"embed", stage_fingerprint(cfg, "embed")}},
                      upstream);
  }
  fail(ErrorKind::contract, "stage_fingerprint: unknown stage " + stage);
}

// The CLI command that produces each stage's artifacts.
inline std::string producing_command(const PipelineConfig& cfg, const std::string& stage) {
  if (stage == "corpus") {
    return cfg.source == "synthetic" ? "synth" : "ingest";
  }
  return stage;
}

// ---- Artifact stamps -------------------------------------------------------

struct StageStamp {
  std::string stage;
  std::string config_hash;
  std::string fingerprint;
  std::map<std::string, std::string> inputs;   // relative path → content hash
  std::vector<std::string> outputs;            // relative paths
};

inline std::string file_content_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot read " + path.string());
  std::uint64_t state = kFnvOffset;
  char buffer[1 << 14];
  while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
    state = fnv1a64(std::string_view(buffer, static_cast<std::size_t>(in.gcount())),
                    state);
  }
  return hex64(state);
}

class Workspace {
 public:
  explicit Workspace(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& relative) const {
    return root_ / relative;
  }

  void ensure_layout() const {
    for (const char* dir : {"corpus", "corpus/split", "interests", "embeddings",
                            "codebooks", "checkpoints", "reports", "stamps"}) {
      std::filesystem::create_directories(root_ / dir);
    }
  }

  std::filesystem::path stamp_path(const std::string& stage) const {
    return root_ / "stamps" / (stage + ".json");
  }

  void write_stamp(const StageStamp& stamp) const {
    Json j{{"stage", stamp.stage},
           {"config_hash", stamp.config_hash},
           {"fingerprint", stamp.fingerprint},
           {"inputs", stamp.inputs},
           {"outputs", stamp.outputs}};
    write_json_file(stamp_path(stamp.stage), j);
  }

  std::optional<StageStamp> read_stamp(const std::string& stage) const {
    const auto path = stamp_path(stage);
    if (!std::filesystem::exists(path)) {
      return std::nullopt;
    }
    const Json j = read_json_file(path);
    StageStamp stamp;
    try {
      stamp.stage = j.at("stage").get<std::string>();
      stamp.config_hash = j.at("config_hash").get<std::string>();
      stamp.fingerprint = j.at("fingerprint").get<std::string>();
      stamp.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
      stamp.outputs = j.at("outputs").get<std::vector<std::string>>();
    } catch (const Json::exception& e) {
      fail(ErrorKind::corrupt_input,
           "stamp " + path.string() + ": malformed: " + e.what());
    }
    return stamp;
  }

 private:
  std::filesystem::path root_;
};

// One command at a time per workdir.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir)
      : path_(workdir / ".lock") {
    std::filesystem::create_directories(workdir);
    if (std::filesystem::exists(path_)) {
      fail(ErrorKind::io, "workdir is locked by another command (" + path_.string() +
                              "); remove the file if that run is gone");
    }
    std::ofstream out(path_);
    out << "locked\n";
    require(out.good(), ErrorKind::io, "cannot create lock file " + path_.string());
  }
  ~WorkdirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  std::filesystem::path path_;
};

// ---- Embedding file IO -----------------------------------------------------

inline void write_embeddings_file(const std::filesystem::path& path,
                                  const std::map<std::string, EmbeddingVector>& vectors) {
  std::vector<Json> records;
  records.reserve(vectors.size());
  for (const auto& [item, v] : vectors) {
    records.push_back(Json{{"item", item}, {"values", v.values}});
  }
  write_jsonl_file(path, records);
}

inline std::map<std::string, EmbeddingVector> read_embeddings_file(
    const std::filesystem::path& path) {
  std::map<std::string, EmbeddingVector> out;
  for (const auto& j : read_jsonl_file(path)) {
    try {
      EmbeddingVector v;
      v.values = j.at("values").get<std::vector<double>>();
      v.normalized = true;
      out[j.at("item").get<std::string>()] = std::move(v);
    } catch (const Json::exception& e) {
      fail(ErrorKind::corrupt_input,
           "embeddings " + path.string() + ": malformed: " + e.what());
    }
  }
  require(!out.empty(), ErrorKind::corrupt_input,
          "embeddings " + path.string() + ": no records");
  return out;
}

// ---- The pipeline ----------------------------------------------------------

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg, bool force = false,
                    std::ostream* log = &std::cout)
      : cfg_(std::move(cfg)), ws_(cfg_.workdir), force_(force), log_(log) {
    validate_pipeline_config(cfg_);
    hash_ = config_hash(cfg_);
    ws_.ensure_layout();
  }

  const PipelineConfig& config() const { return cfg_; }
  const Workspace& workspace() const { return ws_; }
  const std::string& hash() const { return hash_; }
  int grpo_train_calls() const { return grpo_train_calls_; }

  // -- corpus ---------------------------------------------------------------

  void synth() {
    require(cfg_.source == "synthetic", ErrorKind::config,
            "synth: config source is '" + cfg_.source + "'; use the ingest command");
    if (fresh("corpus")) return;
    log("synth", "generating synthetic corpus");
    const SyntheticCorpus corpus = generate_synthetic(cfg_.synth, cfg_.seed);
    auto [kept, dropped] = drop_short_sequences(corpus.sequences, 3);
    const SplitDataset split = leave_last_out_split(kept);
    write_corpus_artifacts(split, corpus.items, dropped);
    write_json_file(ws_.path("corpus/ground_truth.json"),
                    ground_truth_to_json(corpus.ground_truth));
    finish("corpus", {},
           {"corpus/split/train.jsonl", "corpus/split/valid.jsonl",
            "corpus/split/test.jsonl", "corpus/metadata.jsonl",
            "corpus/ground_truth.json", "corpus/stats.json"});
  }

  void ingest() {
    require(cfg_.source == "file", ErrorKind::config,
            "ingest: config source is '" + cfg_.source + "'; use the synth command");
    if (fresh("corpus")) return;
    log("ingest", "parsing " + cfg_.reviews_path);
    const auto reviews = parse_reviews_file(cfg_.reviews_path);
    const auto metadata = parse_metadata_file(cfg_.metadata_path);
    const auto filtered = kcore_filter(reviews.interactions, cfg_.kcore);
    auto [kept, dropped] = drop_short_sequences(build_sequences(filtered), 3);
    const SplitDataset split = leave_last_out_split(kept);

    std::map<std::string, ItemMeta> by_id;
    for (const auto& meta : metadata.items) {
      by_id[meta.item_id] = meta;
    }
    std::vector<ItemMeta> metas;
    for (const auto& item : split.item_universe) {
      auto it = by_id.find(item);
      if (it != by_id.end() && !it->second.title.empty()) {
        metas.push_back(it->second);
      } else {
        ItemMeta placeholder;
        placeholder.item_id = item;
        placeholder.title = item;
        metas.push_back(placeholder);
      }
    }
    write_corpus_artifacts(split, metas, dropped);
    finish("corpus", {},
           {"corpus/split/train.jsonl", "corpus/split/valid.jsonl",
            "corpus/split/test.jsonl", "corpus/metadata.jsonl", "corpus/stats.json"});
  }

  // -- mining ---------------------------------------------------------------

  void mine() {
    consume("corpus");
    if (fresh("mine")) return;
    const auto metas = read_metadata(ws_.path("corpus/metadata.jsonl"));
    log("mine", "mining interests for " + std::to_string(metas.size()) + " items");

    std::vector<std::unique_ptr<ChatProvider>> owned;
    std::vector<ChatProvider*> providers;
    for (const auto& pc : cfg_.providers) {
      owned.push_back(make_chat_provider(pc));
      providers.push_back(owned.back().get());
    }
    const PromptLibrary lib = cfg_.prompts_dir.empty()
                                  ? PromptLibrary::defaults()
                                  : PromptLibrary::from_dir(cfg_.prompts_dir);
    auto embedder = make_embedder(cfg_.embed);
    MiningOptions opts;
    opts.merge_threshold = cfg_.merge_threshold;
    opts.threads = static_cast<unsigned>(cfg_.threads);
    const auto mined = mine_corpus(providers, providers[cfg_.rldi_provider_index], lib,
                                   metas, *embedder, opts);
    write_interests_file(ws_.path("interests/interests.jsonl"), mined);
    finish("mine", {"corpus/metadata.jsonl"}, {"interests/interests.jsonl"});
  }

  // -- embeddings -----------------------------------------------------------

  void embed() {
    consume("corpus");
    consume("mine");
    if (fresh("embed")) return;
    const auto metas = read_metadata(ws_.path("corpus/metadata.jsonl"));
    const auto mined = read_interests_file(ws_.path("interests/interests.jsonl"));
    log("embed", "embedding " + std::to_string(metas.size()) + " items");
    std::map<std::string, const AggregatedInterests*> by_item;
    for (const auto& agg : mined) {
      by_item[agg.item_id] = &agg;
    }
    auto embedder = make_embedder(cfg_.embed);
    std::map<std::string, EmbeddingVector> deep, shallow;
    for (const auto& meta : metas) {
      shallow[meta.item_id] = shallow_item_embedding(*embedder, meta);
      auto it = by_item.find(meta.item_id);
      if (it != by_item.end() && !it->second->interests.empty()) {
        deep[meta.item_id] = deep_item_embedding(*embedder, *it->second);
      } else {
        // No mined interests for this item: fall back to its metadata text so
        // the deep table still covers the whole universe.
        deep[meta.item_id] = shallow[meta.item_id];
      }
    }
    write_embeddings_file(ws_.path("embeddings/deep.jsonl"), deep);
    write_embeddings_file(ws_.path("embeddings/shallow.jsonl"), shallow);
    finish("embed", {"corpus/metadata.jsonl", "interests/interests.jsonl"},
           {"embeddings/deep.jsonl", "embeddings/shallow.jsonl"});
  }

  // -- tokenizer ------------------------------------------------------------

  void tokenize() {
    consume("embed");
    if (fresh("tokenize")) return;
    const std::string source_file =
        "embeddings/" + arm_embedding_source(cfg_.arm) + ".jsonl";
    const auto vectors = read_embeddings_file(ws_.path(source_file));
    log("tokenize", "training codebooks on " + std::to_string(vectors.size()) +
                        " embeddings (" + arm_embedding_source(cfg_.arm) + ")");
    std::vector<EmbeddingVector> flat;
    flat.reserve(vectors.size());
    for (const auto& [item, v] : vectors) {
      flat.push_back(v);
    }
    TrainCfg tcfg;
    tcfg.max_iters = cfg_.tokenizer.max_iters;
    tcfg.seed = cfg_.tokenizer.seed;
    tcfg.threads = cfg_.threads;
    const Codebooks cb = train_codebooks(flat, cfg_.tokenizer.H, cfg_.tokenizer.K, tcfg);
    const SidTable table = assign_sids(cb, vectors);
    write_codebooks(ws_.path("codebooks/codebooks.json"), cb);
    write_sid_table(ws_.path("codebooks/sid_table.json"), table);
    finish("tokenize", {source_file},
           {"codebooks/codebooks.json", "codebooks/sid_table.json"});
  }

  // -- SFT ------------------------------------------------------------------

  void sft() {
    consume("corpus");
    consume("tokenize");
    if (fresh("sft")) return;
    const SplitDataset data = read_split(ws_.path("corpus/split"));
    const SidTable table = read_sid_table(ws_.path("codebooks/sid_table.json"));
    const Vocab vocab = Vocab::for_table(table);
    GenConfig mcfg = cfg_.model;
    mcfg.vocab_size = vocab.size();
    GenModel model(mcfg);
    model.init(cfg_.sft.seed);
    log("sft", "training on " + std::to_string(data.train.size()) + " sequences");
    SftCfg scfg = cfg_.sft;
    scfg.threads = cfg_.threads;
    auto result = sft_train(std::move(model), data, table, vocab, scfg);
    save_checkpoint(ws_.path("checkpoints/sft.ckpt"), result.model, vocab,
                    static_cast<long long>(result.curve.size()));
    Json curve = Json::array();
    for (const auto& point : result.curve) {
      curve.push_back(Json{{"step", point.step}, {"loss", point.loss}});
    }
    write_json_file(ws_.path("checkpoints/sft_curve.json"),
                    Json{{"curve", curve}, {"epoch_mean", result.epoch_mean}});
    finish("sft",
           {"corpus/split/train.jsonl", "codebooks/sid_table.json"},
           {"checkpoints/sft.ckpt", "checkpoints/sft_curve.json"});
  }

  // -- GRPO -----------------------------------------------------------------

  void rl() {
    require(cfg_.arm != "sft_only", ErrorKind::config,
            "rl: arm 'sft_only' skips reinforcement learning");
    consume("sft");
    consume("mine");
    if (fresh("rl")) return;
    const SplitDataset data = read_split(ws_.path("corpus/split"));
    const SidTable table = read_sid_table(ws_.path("codebooks/sid_table.json"));
    const SidTrie trie = build_trie(table);
    auto loaded = load_checkpoint(ws_.path("checkpoints/sft.ckpt"));
    const Vocab vocab = loaded.vocab;
    const auto mined = read_interests_file(ws_.path("interests/interests.jsonl"));
    const ItemLabelTable labels = build_item_labels(mined);
    const RewardStrategy strategy = arm_reward(cfg_.arm, cfg_.reward);
    log("rl", "GRPO (" + strategy.kind + ") on " + std::to_string(data.train.size()) +
                  " queries");
    RLConfig rcfg = cfg_.rl;
    rcfg.threads = cfg_.threads;
    const GenModel reference = loaded.model;
    ++grpo_train_calls_;
    auto result = grpo_train(std::move(loaded.model), reference, data, table, trie,
                             vocab, strategy, labels, rcfg);
    save_checkpoint(ws_.path("checkpoints/rl.ckpt"), result.policy, vocab,
                    static_cast<long long>(result.curve.size()));
    Json curve = Json::array();
    for (const auto& point : result.curve) {
      curve.push_back(Json{{"step", point.step},
                           {"mean_reward", point.mean_reward},
                           {"mean_kl", point.mean_kl},
                           {"group_hit_rate", point.group_hit_rate}});
    }
    write_json_file(ws_.path("checkpoints/rl_curve.json"),
                    Json{{"curve", curve},
                         {"epoch_mean_reward", result.epoch_mean_reward},
                         {"reward_kind", strategy.kind}});
    finish("rl",
           {"checkpoints/sft.ckpt", "codebooks/sid_table.json",
            "interests/interests.jsonl"},
           {"checkpoints/rl.ckpt", "checkpoints/rl_curve.json"});
  }

  // -- evaluation -----------------------------------------------------------

  MetricsReport eval() {
    consume("tokenize");
    const bool use_rl = cfg_.arm != "sft_only";
    consume(use_rl ? "rl" : "sft");
    if (fresh("eval")) {
      return metrics_report_from_json(read_json_file(ws_.path("reports/eval.json")));
    }
    const SplitDataset data = read_split(ws_.path("corpus/split"));
    const SidTable table = read_sid_table(ws_.path("codebooks/sid_table.json"));
    const SidTrie trie = build_trie(table);
    auto loaded = load_checkpoint(
        ws_.path(use_rl ? "checkpoints/rl.ckpt" : "checkpoints/sft.ckpt"));
    log("eval", "beam evaluation over " + std::to_string(data.test.size()) + " users");
    EvalConfig ecfg = cfg_.eval;
    ecfg.threads = cfg_.threads;
    MetricsReport report =
        evaluate(loaded.model, data.test, table, trie, loaded.vocab, ecfg);
    report.arm = cfg_.arm;
    report.dataset = dataset_name();
    report.seed = cfg_.seed;
    report.config_hash = hash_;
    if (arm_embedding_source(cfg_.arm) == "deep" || cfg_.arm == "no_ieid") {
      report.iq = compute_iq(data);
    }
    write_json_file(ws_.path("reports/eval.json"), metrics_report_to_json(report));
    finish("eval",
           {"codebooks/sid_table.json",
            use_rl ? "checkpoints/rl.ckpt" : "checkpoints/sft.ckpt"},
           {"reports/eval.json"});
    return report;
  }

  // -- full chain -----------------------------------------------------------

  MetricsReport all() {
    if (cfg_.source == "synthetic") {
      synth();
    } else {
      ingest();
    }
    mine();
    embed();
    tokenize();
    sft();
    if (cfg_.arm != "sft_only") {
      rl();
    }
    return eval();
  }

  // -- ablation -------------------------------------------------------------

  MetricsReport ablate(const std::string& arm) {
    bool known = false;
    for (const auto& candidate : ablation_arms()) {
      known = known || candidate == arm;
    }
    require(known, ErrorKind::config, "ablate: unknown arm '" + arm + "'");
    PipelineConfig arm_cfg = cfg_;
    arm_cfg.arm = arm;
    arm_cfg.workdir = (ws_.root() / "arms" / arm).string();
    Pipeline arm_pipeline(arm_cfg, force_, log_);
    share_corpus_artifacts_with(arm_pipeline);
    MetricsReport report = arm_pipeline.all();
    grpo_train_calls_ += arm_pipeline.grpo_train_calls();
    write_json_file(ws_.path("reports/ablate_" + arm + ".json"),
                    metrics_report_to_json(report));
    return report;
  }

  // -- transfer -------------------------------------------------------------

  // Train-free cross-corpus evaluation: corpus B is quantized with this
  // pipeline's codebooks and the trained model is scored on B's test split.
  MetricsReport transfer() {
    require(cfg_.transfer_synth.has_value(), ErrorKind::config,
            "transfer: config has no 'transfer' section");
    consume("tokenize");
    const bool use_rl = cfg_.arm != "sft_only";
    consume(use_rl ? "rl" : "sft");

    PipelineConfig b_cfg = cfg_;
    b_cfg.source = "synthetic";
    b_cfg.synth = *cfg_.transfer_synth;
    b_cfg.seed = cfg_.transfer_seed;
    b_cfg.workdir = (ws_.root() / "transfer").string();
    b_cfg.transfer_synth.reset();
    Pipeline b(b_cfg, force_, log_);
    b.synth();
    b.mine();
    b.embed();

    const Codebooks cb = read_codebooks(ws_.path("codebooks/codebooks.json"));
    const std::string source_file =
        "embeddings/" + arm_embedding_source(cfg_.arm) + ".jsonl";
    const auto b_vectors = read_embeddings_file(b.workspace().path(source_file));
    require(!b_vectors.empty() &&
                static_cast<int>(b_vectors.begin()->second.values.size()) == cb.dim,
            ErrorKind::contract,
            "transfer: corpus B embedding dim does not match the trained codebooks");
    const SidTable b_table = assign_sids(cb, b_vectors);
    const SidTrie b_trie = build_trie(b_table);

    auto loaded = load_checkpoint(
        ws_.path(use_rl ? "checkpoints/rl.ckpt" : "checkpoints/sft.ckpt"));
    // Corpus B only has to fit inside the trained token space: same SID depth,
    // no code id beyond the model's grid, and no disambiguator id the model
    // has no output row for.
    require(b_table.H == loaded.vocab.H, ErrorKind::contract,
            "transfer: corpus B SID depth does not match the trained model");
    int b_max_code = -1;
    for (const auto& [item, sid] : b_table.by_item) {
      for (int code : sid.codes) {
        b_max_code = std::max(b_max_code, code);
      }
    }
    require(b_max_code < loaded.vocab.K, ErrorKind::contract,
            "transfer: corpus B uses code id " + std::to_string(b_max_code) +
                " but the trained model only has tokens for codes below " +
                std::to_string(loaded.vocab.K));
    require(b_table.max_disambiguator() < loaded.vocab.D, ErrorKind::contract,
            "transfer: corpus B collapses onto too few SID paths; it needs " +
                std::to_string(b_table.max_disambiguator() + 1) +
                " disambiguator tokens but the trained model only has " +
                std::to_string(loaded.vocab.D));
    const SplitDataset b_data = read_split(b.workspace().path("corpus/split"));
    log("transfer", "evaluating on corpus B (" + std::to_string(b_data.test.size()) +
                        " users)");
    EvalConfig ecfg = cfg_.eval;
    ecfg.threads = cfg_.threads;
    MetricsReport report =
        evaluate(loaded.model, b_data.test, b_table, b_trie, loaded.vocab, ecfg);
    report.arm = cfg_.arm;
    report.dataset = "transfer";
    report.seed = cfg_.seed;
    report.config_hash = hash_;
    write_json_file(ws_.path("reports/transfer.json"), metrics_report_to_json(report));
    return report;
  }

 private:
  std::string dataset_name() const {
    if (cfg_.source == "synthetic") {
      return "synthetic";
    }
    return std::filesystem::path(cfg_.reviews_path).stem().string();
  }

  void log(const std::string& stage, const std::string& message) const {
    if (log_ != nullptr) {
      *log_ << "[" << stage << "] " << message << "\n";
    }
  }

  void write_corpus_artifacts(const SplitDataset& split,
                              const std::vector<ItemMeta>& metas, std::size_t dropped) {
    write_split(ws_.path("corpus/split"), split);
    write_metadata(ws_.path("corpus/metadata.jsonl"), metas);
    write_json_file(ws_.path("corpus/stats.json"),
                    Json{{"users", split.test.size()},
                         {"items", split.item_universe.size()},
                         {"train_examples", split.train.size()},
                         {"dropped_short_sequences", dropped}});
  }

  // Skip when the stage's stamp still matches config, inputs, and outputs.
  bool fresh(const std::string& stage) {
    if (force_) {
      return false;
    }
    const auto stamp = ws_.read_stamp(stage);
    if (!stamp.has_value() || stamp->fingerprint != stage_fingerprint(cfg_, stage)) {
      return false;
    }
    for (const auto& out : stamp->outputs) {
      if (!std::filesystem::exists(ws_.path(out))) {
        return false;
      }
    }
    for (const auto& [input, hash] : stamp->inputs) {
      if (!std::filesystem::exists(ws_.path(input)) ||
          file_content_hash(ws_.path(input)) != hash) {
        return false;
      }
    }
    log(stage, "up to date, skipping");
    return true;
  }

  // Check that a prerequisite stage has run and matches the current config.
  void consume(const std::string& stage) const {
    const auto stamp = ws_.read_stamp(stage);
    const std::string command = producing_command(cfg_, stage);
    if (!stamp.has_value()) {
      fail(ErrorKind::prerequisite, "missing artifacts from the '" + stage +
                                        "' stage; run `sidrec " + command + "` first");
    }
    if (!force_ && stamp->fingerprint != stage_fingerprint(cfg_, stage)) {
      fail(ErrorKind::config,
           "artifacts from the '" + stage +
               "' stage were produced under a different configuration; re-run `sidrec " +
               command + "` or pass --force");
    }
    for (const auto& out : stamp->outputs) {
      if (!std::filesystem::exists(ws_.path(out))) {
        fail(ErrorKind::prerequisite, "artifact " + out + " is missing; run `sidrec " +
                                          command + "` first");
      }
    }
  }

  void finish(const std::string& stage, const std::vector<std::string>& inputs,
              const std::vector<std::string>& outputs) {
    StageStamp stamp;
    stamp.stage = stage;
    stamp.config_hash = hash_;
    stamp.fingerprint = stage_fingerprint(cfg_, stage);
    for (const auto& input : inputs) {
      stamp.inputs[input] = file_content_hash(ws_.path(input));
    }
    stamp.outputs = outputs;
    ws_.write_stamp(stamp);
    log(stage, "done");
  }

  // Interest quality: each user's aggregated interests against the embedding
  // of their held-out item.
  std::optional<double> compute_iq(const SplitDataset& data) {
    const auto mined = read_interests_file(ws_.path("interests/interests.jsonl"));
    const auto deep = read_embeddings_file(ws_.path("embeddings/deep.jsonl"));
    std::map<std::string, const AggregatedInterests*> by_item;
    for (const auto& agg : mined) {
      by_item[agg.item_id] = &agg;
    }
    std::map<std::string, AggregatedInterests> user_interests;
    std::map<std::string, std::vector<std::string>> future;
    for (const auto& ex : data.test) {
      AggregatedInterests merged;
      merged.item_id = ex.user;
      std::set<std::string> seen;
      for (const auto& item : ex.history) {
        auto it = by_item.find(item);
        if (it == by_item.end()) {
          continue;
        }
        for (const auto& interest : it->second->interests) {
          if (seen.insert(interest.text).second) {
            merged.interests.push_back(interest);
          }
        }
      }
      if (merged.interests.empty()) {
        continue;  // no mined signal for this user's history
      }
      user_interests[ex.user] = std::move(merged);
      future[ex.user] = {ex.target};
    }
    if (user_interests.empty()) {
      return std::nullopt;
    }
    auto embedder = make_embedder(cfg_.embed);
    return interest_quality(user_interests, future, deep, *embedder);
  }

  void share_corpus_artifacts_with(Pipeline& other) const {
    // Corpus, interest, and embedding artifacts do not depend on the arm, so
    // arms reuse them; downstream stages rebuild under the arm's fingerprints.
    for (const std::string stage : {"corpus", "mine", "embed"}) {
      const auto stamp = ws_.read_stamp(stage);
      if (!stamp.has_value()) {
        continue;
      }
      for (const auto& out : stamp->outputs) {
        if (std::filesystem::exists(ws_.path(out))) {
          std::filesystem::create_directories(
              other.ws_.path(out).parent_path());
          std::filesystem::copy_file(ws_.path(out), other.ws_.path(out),
                                     std::filesystem::copy_options::overwrite_existing);
        }
      }
      StageStamp copied = *stamp;
      copied.fingerprint = stage_fingerprint(other.cfg_, stage);
      copied.config_hash = other.hash_;
      other.ws_.write_stamp(copied);
    }
  }

  PipelineConfig cfg_;
  Workspace ws_;
  bool force_ = false;
  std::ostream* log_ = nullptr;
  std::string hash_;
  int grpo_train_calls_ = 0;
};

}  // namespace sidrec

#endif  // SIDREC_PIPELINE_HPP
