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
// Token vocabulary over SIDs: level-tagged code tokens, disambiguator tokens,
// and the BOS/EOS/PAD specials, plus history/target sequence construction.

#ifndef SIDREC_VOCAB_HPP
#define SIDREC_VOCAB_HPP

#include <algorithm>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/jsonl.hpp"
#include "sidrec/tokenizer.hpp"

namespace sidrec {

struct Vocab {
  int H = 0;
  int K = 0;
  int D = 16;  // disambiguator token count

  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  int size() const { return H * K + D + 3; }

  int code_token(int level, int code) const {
    require(level >= 0 && level < H, ErrorKind::contract,
            "code_token: level " + std::to_string(level) + " outside [0, " +
                std::to_string(H) + ")");
    require(code >= 0 && code < K, ErrorKind::contract,
            "code_token: code " + std::to_string(code) + " outside [0, " +
                std::to_string(K) + ")");
    return 3 + level * K + code;
  }

  int disamb_token(int d) const {
    require(d >= 0 && d < D, ErrorKind::contract,
            "disamb_token: disambiguator " + std::to_string(d) + " outside [0, " +
                std::to_string(D) + ")");
    return 3 + H * K + d;
  }

  bool is_code(int token) const { return token >= 3 && token < 3 + H * K; }
  bool is_disamb(int token) const { return token >= 3 + H * K && token < size(); }

  int code_level(int token) const {
    require(is_code(token), ErrorKind::contract, "code_level: not a code token");
    return (token - 3) / K;
  }
  int code_value(int token) const {
    require(is_code(token), ErrorKind::contract, "code_value: not a code token");
    return (token - 3) % K;
  }
  int disamb_value(int token) const {
    require(is_disamb(token), ErrorKind::contract, "disamb_value: not a disambiguator token");
    return token - 3 - H * K;
  }

  // Vocabulary sized for a SID table: D covers every observed disambiguator,
  // with a floor of 16 so small corpora keep a stable default layout.
  static Vocab for_table(const SidTable& table) {
    Vocab v;
    v.H = table.H;
    v.K = 0;
    for (const auto& [item, sid] : table.by_item) {
      for (int code : sid.codes) {
        v.K = std::max(v.K, code + 1);
      }
    }
    v.D = std::max(16, table.max_disambiguator() + 1);
    return v;
  }

  static Vocab for_codebooks(const Codebooks& cb, const SidTable& table) {
    Vocab v;
    v.H = cb.H;
    v.K = cb.K;
    v.D = std::max(16, table.max_disambiguator() + 1);
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.H == b.H && a.K == b.K && a.D == b.D;
  }
};

inline Json vocab_to_json(const Vocab& v) {
  return Json{{"H", v.H}, {"K", v.K}, {"D", v.D}};
}

inline Vocab vocab_from_json(const Json& j) {
  Vocab v;
  v.H = j.at("H").get<int>();
  v.K = j.at("K").get<int>();
  v.D = j.at("D").get<int>();
  return v;
}

struct TokenSequence {
  std::vector<int> tokens;    // starts with BOS
  std::size_t boundary = 0;   // index of the first target token
};

inline std::vector<int> sid_tokens(const Vocab& vocab, const SID& sid) {
  require(static_cast<int>(sid.codes.size()) == vocab.H, ErrorKind::contract,
          "sid_tokens: SID level count does not match vocabulary");
  std::vector<int> out;
  out.reserve(sid.codes.size() + 1);
  for (int level = 0; level < vocab.H; ++level) {
    out.push_back(vocab.code_token(level, sid.codes[level]));
  }
  if (sid.has_disambiguator()) {
    out.push_back(vocab.disamb_token(sid.disambiguator));
  }
  return out;
}

// BOS followed by the SIDs of the last n_hist history items, oldest to newest.
inline TokenSequence encode_history(const SidTable& table, const Vocab& vocab,
                                    const std::vector<std::string>& history, int n_hist) {
  require(n_hist >= 1, ErrorKind::contract, "encode_history: n_hist must be positive");
  TokenSequence seq;
  seq.tokens.push_back(Vocab::kBos);
  const std::size_t start =
      history.size() > static_cast<std::size_t>(n_hist) ? history.size() - n_hist : 0;
  for (std::size_t i = start; i < history.size(); ++i) {
    auto it = table.by_item.find(history[i]);
    require(it != table.by_item.end(), ErrorKind::contract,
            "encode_history: item " + history[i] + " has no SID");
    for (int token : sid_tokens(vocab, it->second)) {
      seq.tokens.push_back(token);
    }
  }
  seq.boundary = seq.tokens.size();
  return seq;
}

// History plus the target item's SID; loss applies to the post-boundary span.
inline TokenSequence build_training_sequence(const SidTable& table, const Vocab& vocab,
                                             const std::vector<std::string>& history,
                                             const std::string& target, int n_hist) {
  TokenSequence seq = encode_history(table, vocab, history, n_hist);
  auto it = table.by_item.find(target);
  require(it != table.by_item.end(), ErrorKind::contract,
          "build_training_sequence: target " + target + " has no SID");
  for (int token : sid_tokens(vocab, it->second)) {
    seq.tokens.push_back(token);
  }
  return seq;
}

}  // namespace sidrec

#endif  // SIDREC_VOCAB_HPP
