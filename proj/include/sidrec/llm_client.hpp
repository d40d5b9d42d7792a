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
// LLM provider clients: an HTTP chat-completion client with retries,
// exponential backoff, token-bucket rate limiting and bounded in-flight
// requests; a deterministic mock provider for offline runs; and a remote
// embedding provider sharing the same transport.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "sidrec/common.hpp"
#include "sidrec/embed.hpp"
#include "sidrec/jsonl.hpp"

namespace sidrec {

struct ProviderConfig {
  std::string provider_id = "mock";
  std::string kind = "mock";  // "mock" | "http"
  std::string endpoint_url;   // http://host:port/path for kind == "http"
  std::string model_name;
  std::string api_key_env;    // NAME of the env var holding the credential
  std::string response_path = "choices.0.message.content";
  int max_retries = 3;
  double timeout_seconds = 30.0;
  double rate_limit_per_minute = 0.0;  // 0 = unlimited
  int max_in_flight = 4;
  double temperature = 0.0;
  uint64_t mock_seed = 0;
};

inline void validate_provider_config(const ProviderConfig& cfg) {
  require(!cfg.provider_id.empty(), ErrorKind::config, "provider_id must be non-empty");
  require(cfg.kind == "mock" || cfg.kind == "http", ErrorKind::config,
          "provider kind must be mock or http: " + cfg.kind);
  require(cfg.max_retries >= 0, ErrorKind::config, "max_retries must be >= 0");
  require(cfg.timeout_seconds > 0.0, ErrorKind::config, "timeout must be > 0");
  require(cfg.rate_limit_per_minute >= 0.0, ErrorKind::config,
          "rate_limit_per_minute must be >= 0");
  require(cfg.max_in_flight >= 1 && cfg.max_in_flight <= 256, ErrorKind::config,
          "max_in_flight must be in 1..256");
  if (cfg.kind == "http") {
    require(!cfg.endpoint_url.empty(), ErrorKind::config,
            "http provider needs endpoint_url");
  }
}

inline Json provider_config_to_json(const ProviderConfig& c) {
  return Json{{"provider_id", c.provider_id},
              {"kind", c.kind},
              {"endpoint_url", c.endpoint_url},
              {"model_name", c.model_name},
              {"api_key_env", c.api_key_env},
              {"response_path", c.response_path},
              {"max_retries", c.max_retries},
              {"timeout_seconds", c.timeout_seconds},
              {"rate_limit_per_minute", c.rate_limit_per_minute},
              {"max_in_flight", c.max_in_flight},
              {"temperature", c.temperature},
              {"mock_seed", c.mock_seed}};
}

inline ProviderConfig provider_config_from_json(const Json& j) {
  ProviderConfig c;
  c.provider_id = j.value("provider_id", c.provider_id);
  c.kind = j.value("kind", c.kind);
  c.endpoint_url = j.value("endpoint_url", c.endpoint_url);
  c.model_name = j.value("model_name", c.model_name);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.response_path = j.value("response_path", c.response_path);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.rate_limit_per_minute = j.value("rate_limit_per_minute", c.rate_limit_per_minute);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.temperature = j.value("temperature", c.temperature);
  c.mock_seed = j.value("mock_seed", c.mock_seed);
  validate_provider_config(c);
  return c;
}

// ---- Backoff and rate limiting -------------------------------------------

struct RetryPolicy {
  double base_delay_seconds = 1.0;
  double backoff_factor = 2.0;
  double jitter_fraction = 0.1;  // extra uniform [0, fraction] of the delay

  // attempt is 1-based: the wait before retry #attempt.
  double delay_seconds(int attempt, Rng& rng) const {
    require(attempt >= 1, ErrorKind::contract, "retry attempt is 1-based");
    const double base =
        base_delay_seconds * std::pow(backoff_factor, static_cast<double>(attempt - 1));
    return base * (1.0 + jitter_fraction * rng.next_double());
  }
};

inline double steady_now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

inline void real_sleep_seconds(double s) {
  if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

// Thread-safe token bucket: refills at per_minute/60 tokens per second up to
// `capacity`; acquire() blocks (via the injected sleeper) until a token is
// available. A zero rate disables limiting.
class TokenBucket {
 public:
  explicit TokenBucket(double per_minute, std::function<double()> clock = nullptr,
                       std::function<void(double)> sleeper = nullptr, double capacity = 1.0)
      : rate_per_second_(per_minute / 60.0),
        capacity_(capacity),
        tokens_(capacity),
        clock_(clock ? std::move(clock) : steady_now_seconds),
        sleeper_(sleeper ? std::move(sleeper) : real_sleep_seconds) {
    require(per_minute >= 0.0, ErrorKind::config, "rate limit must be >= 0");
    last_ = clock_();
  }

  void acquire() {
    if (rate_per_second_ <= 0.0) return;
    std::unique_lock<std::mutex> lock(mu_);
    for (;;) {
      const double now = clock_();
      tokens_ = std::min(capacity_, tokens_ + (now - last_) * rate_per_second_);
      last_ = now;
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      const double wait = (1.0 - tokens_) / rate_per_second_;
      lock.unlock();
      sleeper_(wait);
      lock.lock();
    }
  }

 private:
  double rate_per_second_;
  double capacity_;
  double tokens_;
  double last_ = 0.0;
  std::function<double()> clock_;
  std::function<void(double)> sleeper_;
  std::mutex mu_;
};

// ---- Response path extraction --------------------------------------------

// Navigates "choices.0.message.content"-style dotted paths; numeric segments
// index arrays.
inline const Json* json_at_path(const Json& root, const std::string& path) {
  const Json* node = &root;
  size_t start = 0;
  while (start <= path.size()) {
    const size_t dotpos = path.find('.', start);
    const std::string seg =
        path.substr(start, dotpos == std::string::npos ? std::string::npos : dotpos - start);
    if (seg.empty()) return nullptr;
    const bool numeric = seg.find_first_not_of("0123456789") == std::string::npos;
    if (numeric && node->is_array()) {
      const size_t idx = static_cast<size_t>(std::stoul(seg));
      if (idx >= node->size()) return nullptr;
      node = &(*node)[idx];
    } else if (node->is_object()) {
      auto it = node->find(seg);
      if (it == node->end()) return nullptr;
      node = &*it;
    } else {
      return nullptr;
    }
    if (dotpos == std::string::npos) break;
    start = dotpos + 1;
  }
  return node;
}

// ---- Provider interfaces --------------------------------------------------

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string id() const = 0;
  virtual std::string complete(const std::string& prompt) = 0;
};

// Shared HTTP POST transport: retry with exponential backoff and jitter on
// transport errors and retryable statuses (408, 429, 5xx); rate limiting via
// token bucket; bounded concurrent requests. Successful 2xx responses that
// fail to parse are NOT retried.
class ProviderTransport {
 public:
  explicit ProviderTransport(const ProviderConfig& cfg, RetryPolicy retry = {},
                             std::function<void(double)> sleeper = real_sleep_seconds)
      : cfg_(cfg),
        retry_(retry),
        sleeper_(std::move(sleeper)),
        bucket_(cfg.rate_limit_per_minute),
        semaphore_(cfg.max_in_flight),
        jitter_rng_(fnv1a64(cfg.provider_id)) {
    validate_provider_config(cfg);
    require(cfg.kind == "http", ErrorKind::contract, "transport needs an http provider");
    const auto scheme_end = cfg.endpoint_url.find("://");
    require(scheme_end != std::string::npos, ErrorKind::config,
            "endpoint_url must include scheme: " + cfg.endpoint_url);
    const auto path_start = cfg.endpoint_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      base_url_ = cfg.endpoint_url;
      path_ = "/";
    } else {
      base_url_ = cfg.endpoint_url.substr(0, path_start);
      path_ = cfg.endpoint_url.substr(path_start);
    }
  }

  Json post_json(const Json& body) {
    semaphore_.acquire();
    struct Release {
      std::counting_semaphore<256>& s;
      ~Release() { s.release(); }
    } release{semaphore_};

    std::string bearer;
    if (!cfg_.api_key_env.empty()) {
      if (const char* key = std::getenv(cfg_.api_key_env.c_str())) bearer = key;
    }
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        double delay;
        {
          std::lock_guard<std::mutex> lock(rng_mu_);
          delay = retry_.delay_seconds(attempt, jitter_rng_);
        }
        sleeper_(delay);
      }
      bucket_.acquire();

      httplib::Client client(base_url_);
      client.set_connection_timeout(std::chrono::duration<double>(cfg_.timeout_seconds));
      client.set_read_timeout(std::chrono::duration<double>(cfg_.timeout_seconds));
      httplib::Headers headers;
      if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);
      auto res = client.Post(path_, headers, payload, "application/json");

      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;  // retryable
      }
      if (res->status >= 200 && res->status < 300) {
        Json parsed = Json::parse(res->body, nullptr, false);
        if (parsed.is_discarded()) {
          fail(ErrorKind::parse, "provider " + cfg_.provider_id +
                                     " returned unparseable body: " + res->body.substr(0, 200));
        }
        return parsed;
      }
      last_error = "http status " + std::to_string(res->status);
      const bool retryable =
          res->status == 408 || res->status == 429 || res->status >= 500;
      if (!retryable) break;
    }
    fail(ErrorKind::provider, "provider " + cfg_.provider_id + " failed after " +
                                  std::to_string(cfg_.max_retries + 1) + " attempt(s): " +
                                  last_error);
  }

 private:
  ProviderConfig cfg_;
  RetryPolicy retry_;
  std::function<void(double)> sleeper_;
  TokenBucket bucket_;
  std::counting_semaphore<256> semaphore_;
  Rng jitter_rng_;
  std::mutex rng_mu_;
  std::string base_url_;
  std::string path_;
};

class HttpChatProvider final : public ChatProvider {
 public:
  explicit HttpChatProvider(const ProviderConfig& cfg, RetryPolicy retry = {},
                            std::function<void(double)> sleeper = real_sleep_seconds)
      : cfg_(cfg), transport_(cfg, retry, std::move(sleeper)) {}

  std::string id() const override { return cfg_.provider_id; }

  std::string complete(const std::string& prompt) override {
    const Json body{{"model", cfg_.model_name},
                    {"messages", Json::array({Json{{"role", "user"}, {"content", prompt}}})},
                    {"temperature", cfg_.temperature}};
    const Json response = transport_.post_json(body);
    const Json* content = json_at_path(response, cfg_.response_path);
    if (content == nullptr || !content->is_string()) {
      fail(ErrorKind::parse, "provider " + cfg_.provider_id + ": no text at response path " +
                                 cfg_.response_path + " in " + response.dump().substr(0, 200));
    }
    return content->get<std::string>();
  }

 private:
  ProviderConfig cfg_;
  ProviderTransport transport_;
};

// ---- RLDI heuristic -------------------------------------------------------

// Offline quality label: 1 when the text has at least 3 tokens and at least
// one contentful token (neither a stopword nor a generic shopping word).
inline int rldi_heuristic(const std::string& text) {
  static const std::set<std::string> kStopwords = {
      "the", "a",  "an", "and", "or", "of",   "for",  "with", "in",
      "on",  "to", "from", "this", "that", "at", "by", "is", "are"};
  static const std::set<std::string> kGeneric = {
      "good",  "quality", "products", "product", "nice",  "great", "items",
      "item",  "stuff",   "things",   "general", "misc",  "various",
      "everyday", "basic", "useful",  "popular", "cheap", "new",  "shopping",
      "buyer", "shopper",  "likes",   "enjoys",  "style"};
  const auto tokens = tokenize(text);
  if (tokens.size() < 3) return 0;
  for (const auto& tok : tokens) {
    if (!kStopwords.count(tok) && !kGeneric.count(tok)) return 1;
  }
  return 0;
}

// ---- Deterministic mock provider -----------------------------------------

// Pure function of (prompt bytes, seed). Recovers planted `topic-<id>` tags
// from the prompt and answers in the exact output schema each template asks
// for, so the full pipeline runs offline with recoverable semantics. About a
// quarter of topic-tagged item prompts get only vague interests, which
// exercises the quality-label machinery downstream.
class MockChatProvider final : public ChatProvider {
 public:
  explicit MockChatProvider(std::string provider_id, uint64_t seed)
      : provider_id_(std::move(provider_id)), seed_(seed) {
    std::string seed_bytes(8, '\0');
    for (int i = 0; i < 8; ++i) {
      seed_bytes[i] = static_cast<char>((seed >> (8 * i)) & 0xff);
    }
    state_ = fnv1a64(seed_bytes);
  }

  std::string id() const override { return provider_id_; }

  std::string complete(const std::string& prompt) override {
    if (prompt.rfind("Describe what the product image shows", 0) == 0) {
      return visual_description(prompt);
    }
    if (prompt.rfind("Classify interest as 1", 0) == 0) {
      return rldi_response(prompt);
    }
    if (prompt.rfind("Given product text and image", 0) == 0) {
      return multimodal_response(prompt);
    }
    return deep_response(prompt);
  }

  static std::vector<int> extract_topics(const std::string& prompt) {
    std::vector<int> topics;
    size_t pos = 0;
    while ((pos = prompt.find("topic-", pos)) != std::string::npos) {
      pos += 6;
      size_t end = pos;
      while (end < prompt.size() && std::isdigit(static_cast<unsigned char>(prompt[end]))) {
        ++end;
      }
      if (end > pos) {
        const int t = std::stoi(prompt.substr(pos, end - pos));
        bool seen = false;
        for (int x : topics) seen = seen || (x == t);
        if (!seen) topics.push_back(t);
      }
      pos = end;
    }
    return topics;
  }

 private:
  static const char* word(uint64_t index) {
    static const char* kWords[] = {"amber",  "birch",  "cedar",   "copper", "coral",
                                   "crimson", "dune",  "ember",   "fern",   "flint",
                                   "garnet", "hazel",  "indigo",  "ivory",  "jade",
                                   "juniper"};
    return kWords[index % 16];
  }

  std::string topic_word(int topic, int slot) const {
    return word(static_cast<uint64_t>(topic) * 3 + static_cast<uint64_t>(slot));
  }

  std::string flavor_word(int topic) const {
    return word(static_cast<uint64_t>(topic) * 5 + seed_ % 16);
  }

  bool vague(const std::string& prompt) const {
    return fnv1a64(prompt, kFnvOffset) % 4 == 0;
  }

  std::string deep_response(const std::string& prompt) const {
    const auto topics = extract_topics(prompt);
    std::string out;
    if (!topics.empty() && !vague(prompt)) {
      int k = 1;
      for (size_t i = 0; i < topics.size() && i < 3; ++i, ++k) {
        const int t = topics[i];
        out += "[Interest_" + std::to_string(k) + "]: topic-" + std::to_string(t) + " " +
               topic_word(t, 0) + " " + topic_word(t, 1) + " appreciation | Confidence: high\n";
      }
      // Item-flavored phrasing: real models never word an interest the same
      // way twice, and downstream discretization relies on that spread.
      const int t0 = topics[0];
      const uint64_t h = fnv1a64(prompt, kFnvOffset);
      out += "[Interest_" + std::to_string(k++) + "]: collecting " + flavor_word(t0) +
             " " + word(h >> 16) + " " + word(h >> 24) + " pieces from the topic-" +
             std::to_string(t0) + " line | Confidence: medium\n";
      out += "[Interest_" + std::to_string(k) + "]: good quality products | Confidence: low\n";
      out += "[Lifestyle]: A " + topic_word(t0, 0) + " enthusiast focused on topic-" +
             std::to_string(t0) + " picks.\n";
    } else if (!topics.empty()) {
      out += "[Interest_1]: good quality products | Confidence: medium\n";
      out += "[Interest_2]: nice everyday items | Confidence: low\n";
      out += "[Lifestyle]: A shopper who likes good quality products.\n";
    } else {
      const uint64_t h = fnv1a64(prompt, state_);
      out += "[Interest_1]: enjoys " + std::string(word(h)) + " and " +
             std::string(word(h >> 8)) + " style products | Confidence: high\n";
      out += "[Interest_2]: good quality products | Confidence: low\n";
      out += "[Lifestyle]: A shopper drawn to " + std::string(word(h)) + " pieces.\n";
    }
    return out;
  }

  std::string multimodal_response(const std::string& prompt) const {
    const auto topics = extract_topics(prompt);
    std::string out;
    if (!topics.empty() && !vague(prompt)) {
      const int t0 = topics[0];
      out += "Visual Tags: [" + topic_word(t0, 0) + " finish, matte aesthetic]\n";
      out += "Text Tags: [topic-" + std::to_string(t0) + ", " + topic_word(t0, 1) + " tone]\n";
      out += "Unified Interests:\n";
      out += "[Interest_1]: topic-" + std::to_string(t0) + " " + topic_word(t0, 0) + " " +
             topic_word(t0, 1) + " appreciation | Confidence: high\n";
      const uint64_t h = fnv1a64(prompt, kFnvOffset);
      out += "[Interest_2]: matte " + flavor_word(t0) + " " + word(h >> 16) +
             " aesthetic display pieces | Confidence: medium\n";
      out += "[Interest_3]: good quality products | Confidence: low\n";
    } else if (!topics.empty()) {
      out += "Visual Tags: [plain look, simple packaging]\n";
      out += "Text Tags: [everyday, basic]\n";
      out += "Unified Interests:\n";
      out += "[Interest_1]: good quality products | Confidence: medium\n";
      out += "[Interest_2]: nice everyday items | Confidence: low\n";
    } else {
      const uint64_t h = fnv1a64(prompt, state_);
      const std::string wa = word(h);
      const std::string wb = word(h >> 8);
      out += "Visual Tags: [" + wa + " finish, matte aesthetic]\n";
      out += "Text Tags: [" + wb + " tone, compact]\n";
      out += "Unified Interests:\n";
      out += "[Interest_1]: matte " + wa + " aesthetic arrangement | Confidence: high\n";
      out += "[Interest_2]: " + wb + " accent collecting | Confidence: medium\n";
      out += "[Interest_3]: good quality products | Confidence: low\n";
    }
    return out;
  }

  std::string rldi_response(const std::string& prompt) const {
    const std::string marker = "Interest: \"";
    const size_t start = prompt.find(marker);
    if (start == std::string::npos) return "Label: 0\n";
    const size_t text_start = start + marker.size();
    const size_t end = prompt.find('"', text_start);
    if (end == std::string::npos) return "Label: 0\n";
    const std::string text = prompt.substr(text_start, end - text_start);
    return "Label: " + std::to_string(rldi_heuristic(text)) + "\n";
  }

  std::string visual_description(const std::string& prompt) const {
    const std::string marker = "Caption: ";
    const size_t start = prompt.find(marker);
    if (start == std::string::npos) return "A plain product photo.";
    size_t end = prompt.find('\n', start);
    if (end == std::string::npos) end = prompt.size();
    const std::string caption = trim(prompt.substr(start + marker.size(), end - (start + marker.size())));
    if (caption.empty() || caption == "{caption}") return "A plain product photo.";
    return "A product photo showing " + caption + ".";
  }

  std::string provider_id_;
  uint64_t seed_;
  uint64_t state_;
};

inline std::unique_ptr<ChatProvider> make_chat_provider(
    const ProviderConfig& cfg, RetryPolicy retry = {},
    std::function<void(double)> sleeper = real_sleep_seconds) {
  validate_provider_config(cfg);
  if (cfg.kind == "mock") {
    return std::make_unique<MockChatProvider>(cfg.provider_id, cfg.mock_seed);
  }
  return std::make_unique<HttpChatProvider>(cfg, retry, std::move(sleeper));
}

// ---- Remote embeddings ----------------------------------------------------

struct EmbedConfig {
  std::string kind = "local";  // "local" | "remote"
  int dim = 64;
  uint64_t seed = 0;           // local provider
  ProviderConfig provider;     // remote transport settings
  std::string response_path = "data.0.embedding";
};

inline EmbedConfig embed_config_from_json(const Json& j) {
  EmbedConfig c;
  c.kind = j.value("kind", c.kind);
  c.dim = j.value("dim", c.dim);
  c.seed = j.value("seed", c.seed);
  c.response_path = j.value("response_path", c.response_path);
  if (j.contains("provider")) c.provider = provider_config_from_json(j.at("provider"));
  require(c.kind == "local" || c.kind == "remote", ErrorKind::config,
          "embedder kind must be local or remote");
  require(c.dim >= 8, ErrorKind::config, "embedding dim must be >= 8");
  return c;
}

class RemoteEmbedder final : public Embedder {
 public:
  explicit RemoteEmbedder(const EmbedConfig& cfg, RetryPolicy retry = {},
                          std::function<void(double)> sleeper = real_sleep_seconds)
      : cfg_(cfg), transport_(cfg.provider, retry, std::move(sleeper)) {
    require(cfg.dim >= 8, ErrorKind::config, "embedding dim must be >= 8");
  }

  int dim() const override { return cfg_.dim; }
  std::string id() const override { return "remote-" + cfg_.provider.provider_id; }

  EmbeddingVector embed(const std::string& text) override {
    require(!text.empty(), ErrorKind::contract, "embed_text: empty text");
    const Json body{{"model", cfg_.provider.model_name}, {"input", text}};
    const Json response = transport_.post_json(body);
    const Json* values = json_at_path(response, cfg_.response_path);
    if (values == nullptr || !values->is_array()) {
      fail(ErrorKind::parse, "embedder: no vector at response path " + cfg_.response_path);
    }
    EmbeddingVector v;
    v.values = values->get<std::vector<double>>();
    require(static_cast<int>(v.values.size()) == cfg_.dim, ErrorKind::parse,
            "embedder returned dim " + std::to_string(v.values.size()) + ", expected " +
                std::to_string(cfg_.dim));
    const double n = norm(v);
    require(n > 0.0, ErrorKind::parse, "embedder returned a zero vector");
    for (double& x : v.values) x /= n;
    v.normalized = true;
    return v;
  }

 private:
  EmbedConfig cfg_;
  ProviderTransport transport_;
};

inline std::unique_ptr<Embedder> make_embedder(const EmbedConfig& cfg) {
  if (cfg.kind == "local") return std::make_unique<LocalEmbedder>(cfg.dim, cfg.seed);
  return std::make_unique<RemoteEmbedder>(cfg);
}

}  // namespace sidrec
