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
// Interest mining: prompt the providers, parse their structured responses,
// aggregate across the ensemble by embedding similarity, synthesize user
// profiles, and attach binary quality labels.

#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/corpus.hpp"
#include "sidrec/embed.hpp"
#include "sidrec/interests.hpp"
#include "sidrec/llm_client.hpp"
#include "sidrec/prompts.hpp"

namespace sidrec {

// ---- Response parsing -----------------------------------------------------

namespace detail {

inline double confidence_value(std::string word) {
  word = lower(trim(word));
  if (word == "high") return 1.0;
  if (word == "medium") return 0.6;
  if (word == "low") return 0.3;
  return -1.0;
}

// "[Interest_3]: some text | Confidence: high" -> (text, confidence).
// Returns false for lines that are not interest lines; malformed interest
// lines (bad confidence, empty text) also return false.
inline bool parse_interest_line(const std::string& line, std::string& text_out,
                                double& conf_out) {
  const std::string s = trim(line);
  if (s.rfind("[Interest_", 0) != 0) return false;
  const size_t close = s.find("]:");
  if (close == std::string::npos) return false;
  const std::string rest = s.substr(close + 2);
  const size_t bar = rest.rfind('|');
  if (bar == std::string::npos) return false;
  const std::string conf_part = trim(rest.substr(bar + 1));
  if (lower(conf_part).rfind("confidence:", 0) != 0) return false;
  const double conf = confidence_value(conf_part.substr(std::string("confidence:").size()));
  if (conf < 0.0) return false;
  const std::string text = trim(rest.substr(0, bar));
  if (text.empty()) return false;
  text_out = text;
  conf_out = conf;
  return true;
}

inline void dedupe_exact_text(std::vector<Interest>& interests) {
  std::vector<Interest> out;
  for (auto& i : interests) {
    bool merged = false;
    for (auto& o : out) {
      if (o.text == i.text) {
        o.confidence = std::max(o.confidence, i.confidence);
        merged = true;
        break;
      }
    }
    if (!merged) out.push_back(std::move(i));
  }
  interests = std::move(out);
}

inline std::vector<std::string> split_lines(const std::string& raw) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= raw.size()) {
    size_t end = raw.find('\n', start);
    if (end == std::string::npos) end = raw.size();
    lines.push_back(raw.substr(start, end - start));
    if (end == raw.size()) break;
    start = end + 1;
  }
  return lines;
}

// Extracts "a, b, c" from the first "Section: [a, b, c]" line; empty optional
// behavior is signalled by returning false.
inline bool bracketed_list(const std::string& line, std::vector<std::string>& out) {
  const size_t open = line.find('[');
  const size_t close = line.rfind(']');
  if (open == std::string::npos || close == std::string::npos || close <= open) return false;
  const std::string inner = line.substr(open + 1, close - open - 1);
  out.clear();
  size_t start = 0;
  while (start <= inner.size()) {
    size_t end = inner.find(',', start);
    if (end == std::string::npos) end = inner.size();
    const std::string piece = trim(inner.substr(start, end - start));
    if (!piece.empty()) out.push_back(piece);
    if (end == inner.size()) break;
    start = end + 1;
  }
  return true;
}

}  // namespace detail

struct ParsedInterestResponse {
  std::vector<Interest> interests;
  std::string lifestyle;
};

inline ParsedInterestResponse parse_interest_lines(const std::string& raw,
                                                   const std::string& provider) {
  ParsedInterestResponse out;
  for (const auto& line : detail::split_lines(raw)) {
    std::string text;
    double conf;
    if (detail::parse_interest_line(line, text, conf)) {
      Interest i;
      i.text = text;
      i.confidence = conf;
      i.sources.insert(provider);
      out.interests.push_back(std::move(i));
      continue;
    }
    const std::string s = trim(line);
    if (s.rfind("[Lifestyle]:", 0) == 0) {
      out.lifestyle = trim(s.substr(std::string("[Lifestyle]:").size()));
    }
  }
  detail::dedupe_exact_text(out.interests);
  return out;
}

// Text-only interest response -> InterestSet. Empty or interest-free
// responses are parse errors carrying the raw text.
inline InterestSet parse_interest_response(const std::string& item_id,
                                           const std::string& provider,
                                           const std::string& raw) {
  if (trim(raw).empty()) {
    fail(ErrorKind::parse, "provider " + provider + ": empty response body for item " +
                               item_id);
  }
  auto parsed = parse_interest_lines(raw, provider);
  if (parsed.interests.empty()) {
    fail(ErrorKind::parse, "provider " + provider + ": no interest lines for item " +
                               item_id + " in response: " + raw.substr(0, 200));
  }
  InterestSet set;
  set.item_id = item_id;
  set.provider = provider;
  set.interests = std::move(parsed.interests);
  return set;
}

// Multimodal response: requires well-formed "Visual Tags: [...]" and
// "Text Tags: [...]" lines and a "Unified Interests" section, which may be
// either a bracketed list on the same line or [Interest_k] lines below it.
inline InterestSet parse_multimodal_response(const std::string& item_id,
                                             const std::string& provider,
                                             const std::string& raw) {
  if (trim(raw).empty()) {
    fail(ErrorKind::parse, "provider " + provider + ": empty response body for item " +
                               item_id);
  }
  const auto lines = detail::split_lines(raw);
  auto find_section = [&](const char* name) -> const std::string* {
    for (const auto& line : lines) {
      if (trim(line).rfind(name, 0) == 0) return &line;
    }
    return nullptr;
  };
  std::vector<std::string> tags;
  const std::string* visual = find_section("Visual Tags:");
  if (visual == nullptr || !detail::bracketed_list(*visual, tags)) {
    fail(ErrorKind::parse, "provider " + provider +
                               ": malformed Visual Tags section for item " + item_id);
  }
  const std::string* text_tags = find_section("Text Tags:");
  if (text_tags == nullptr || !detail::bracketed_list(*text_tags, tags)) {
    fail(ErrorKind::parse, "provider " + provider +
                               ": malformed Text Tags section for item " + item_id);
  }
  const std::string* unified = find_section("Unified Interests");
  if (unified == nullptr) {
    fail(ErrorKind::parse, "provider " + provider +
                               ": missing Unified Interests section for item " + item_id);
  }

  InterestSet set;
  set.item_id = item_id;
  set.provider = provider;
  // Same-line bracketed interests (schema-literal responses).
  std::vector<std::string> inline_texts;
  if (detail::bracketed_list(*unified, inline_texts)) {
    for (const auto& t : inline_texts) {
      Interest i;
      i.text = t;
      i.confidence = 0.6;
      i.sources.insert(provider);
      set.interests.push_back(std::move(i));
    }
  }
  auto parsed = parse_interest_lines(raw, provider);
  for (auto& i : parsed.interests) set.interests.push_back(std::move(i));
  detail::dedupe_exact_text(set.interests);
  if (set.interests.empty()) {
    fail(ErrorKind::parse, "provider " + provider +
                               ": no unified interests for item " + item_id + " in: " +
                               raw.substr(0, 200));
  }
  return set;
}

// ---- Mining operations ----------------------------------------------------

inline InterestSet mine_item_interests(ChatProvider& provider, const PromptLibrary& lib,
                                       const ItemMeta& meta,
                                       const std::vector<ItemMeta>& history_context = {}) {
  const std::string prompt = render_item_prompt(lib, meta, history_context);
  const std::string raw = provider.complete(prompt);
  if (!meta.image_caption.empty()) {
    return parse_multimodal_response(meta.item_id, provider.id(), raw);
  }
  return parse_interest_response(meta.item_id, provider.id(), raw);
}

struct MultimodalResult {
  InterestSet interests;
  bool downgraded = false;       // caption missing, text-only fallback used
  std::string visual_description;
};

// Two-step multimodal mining: normalize the caption into a visual
// description, then extract unified interests. Items without a caption fall
// back to text-only mining with the downgrade flag set.
inline MultimodalResult mine_multimodal(ChatProvider& provider, const PromptLibrary& lib,
                                        const ItemMeta& meta) {
  MultimodalResult result;
  if (meta.image_caption.empty()) {
    ItemMeta text_only = meta;
    result.interests = mine_item_interests(provider, lib, text_only);
    result.downgraded = true;
    return result;
  }
  result.visual_description =
      trim(provider.complete(render_visual_description_prompt(lib, meta)));
  const std::string prompt = render_multimodal_prompt(lib, meta, result.visual_description);
  result.interests =
      parse_multimodal_response(meta.item_id, provider.id(), provider.complete(prompt));
  return result;
}

// Ensemble aggregation: interests are pre-sorted globally (confidence desc,
// text asc, provider asc) so the result is invariant to provider-set order,
// then greedily clustered; a new cluster opens only when the interest is
// below the merge threshold against every existing representative, which
// guarantees all output pairs stay below the threshold. Merging unions the
// sources and keeps the highest-confidence member's text and confidence.
inline AggregatedInterests aggregate_ensemble(const std::vector<InterestSet>& sets,
                                              Embedder& embedder,
                                              double merge_threshold = 0.85) {
  require(!sets.empty(), ErrorKind::contract, "aggregate_ensemble: no provider sets");
  const std::string& item_id = sets.front().item_id;
  for (const auto& s : sets) {
    require(s.item_id == item_id, ErrorKind::contract,
            "aggregate_ensemble: mixed item ids " + item_id + " vs " + s.item_id);
  }

  std::vector<Interest> all;
  for (const auto& s : sets) {
    for (const auto& i : s.interests) {
      Interest copy = i;
      if (copy.sources.empty()) copy.sources.insert(s.provider);
      all.push_back(std::move(copy));
    }
  }
  std::sort(all.begin(), all.end(), [](const Interest& a, const Interest& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.text != b.text) return a.text < b.text;
    const std::string& sa = a.sources.empty() ? std::string() : *a.sources.begin();
    const std::string& sb = b.sources.empty() ? std::string() : *b.sources.begin();
    return sa < sb;
  });

  struct Cluster {
    Interest rep;
    EmbeddingVector emb;
  };
  std::vector<Cluster> clusters;
  for (const auto& i : all) {
    const EmbeddingVector emb = embedder.embed(i.text);
    int best = -1;
    double best_cos = merge_threshold;
    for (size_t c = 0; c < clusters.size(); ++c) {
      const double cs = cosine(emb, clusters[c].emb);
      if (cs >= best_cos && (best < 0 || cs > best_cos)) {
        best = static_cast<int>(c);
        best_cos = cs;
      }
    }
    if (best < 0) {
      clusters.push_back({i, emb});
    } else {
      Cluster& cl = clusters[static_cast<size_t>(best)];
      for (const auto& s : i.sources) cl.rep.sources.insert(s);
      cl.rep.confidence = std::max(cl.rep.confidence, i.confidence);
    }
  }

  AggregatedInterests agg;
  agg.item_id = item_id;
  for (auto& c : clusters) agg.interests.push_back(std::move(c.rep));
  std::sort(agg.interests.begin(), agg.interests.end(),
            [](const Interest& a, const Interest& b) {
              if (a.sources.size() != b.sources.size()) {
                return a.sources.size() > b.sources.size();
              }
              if (a.confidence != b.confidence) return a.confidence > b.confidence;
              return a.text < b.text;
            });
  agg.J = static_cast<int>(agg.interests.size());
  return agg;
}

// ---- Quality labels -------------------------------------------------------

// With a provider, renders the classification prompt and parses "Label: 0/1";
// the provider verdict overrides the heuristic. Without one, applies the
// offline heuristic.
inline int classify_rldi(ChatProvider* provider, const PromptLibrary& lib,
                         const Interest& interest,
                         const std::vector<ItemMeta>& source_items) {
  require(!interest.text.empty(), ErrorKind::contract, "classify_rldi: empty interest text");
  if (provider == nullptr) return rldi_heuristic(interest.text);
  const std::string raw =
      provider->complete(render_rldi_prompt(lib, interest.text, source_items));
  const size_t pos = raw.rfind("Label:");
  if (pos == std::string::npos) {
    fail(ErrorKind::parse, "rldi response lacks Label: line: " + raw.substr(0, 200));
  }
  for (size_t i = pos + 6; i < raw.size(); ++i) {
    if (raw[i] == '0') return 0;
    if (raw[i] == '1') return 1;
    if (!std::isspace(static_cast<unsigned char>(raw[i]))) break;
  }
  fail(ErrorKind::parse, "rldi response has no 0/1 after Label: " + raw.substr(0, 200));
}

// ---- User profiles --------------------------------------------------------

inline UserProfile mine_user_profile(ChatProvider& provider, const PromptLibrary& lib,
                                     const std::vector<AggregatedInterests>& item_interests,
                                     const std::string& user_id) {
  require(!item_interests.empty(), ErrorKind::contract,
          "mine_user_profile: no item interests for user " + user_id);
  std::vector<std::string> summaries;
  for (const auto& agg : item_interests) {
    std::string summary;
    for (size_t i = 0; i < agg.interests.size() && i < 3; ++i) {
      if (i > 0) summary += "; ";
      summary += agg.interests[i].text;
    }
    if (!summary.empty()) summaries.push_back(std::move(summary));
  }
  require(!summaries.empty(), ErrorKind::contract,
          "mine_user_profile: item interests all empty for user " + user_id);
  const std::string raw = provider.complete(render_user_profile_prompt(lib, summaries));
  auto parsed = parse_interest_lines(raw, provider.id());
  if (parsed.interests.empty()) {
    fail(ErrorKind::parse, "user profile for " + user_id + " has no interests in: " +
                               raw.substr(0, 200));
  }
  if (parsed.lifestyle.empty()) {
    fail(ErrorKind::parse, "user profile for " + user_id +
                               " is missing the [Lifestyle] line in: " + raw.substr(0, 200));
  }
  UserProfile profile;
  profile.user_id = user_id;
  profile.interests = std::move(parsed.interests);
  profile.lifestyle = std::move(parsed.lifestyle);
  return profile;
}

// ---- Batch mining ---------------------------------------------------------

struct MiningOptions {
  double merge_threshold = 0.85;
  unsigned threads = 1;
};

// Mines every item with every provider (two-step multimodal when a caption is
// present), aggregates the ensemble, and labels each aggregated interest.
// Results land in slots indexed by input order, so the output is independent
// of worker scheduling.
inline std::vector<AggregatedInterests> mine_corpus(
    const std::vector<ChatProvider*>& providers, ChatProvider* rldi_provider,
    const PromptLibrary& lib, const std::vector<ItemMeta>& metas, Embedder& embedder,
    const MiningOptions& opts = {}) {
  require(!providers.empty(), ErrorKind::contract, "mine_corpus: no providers");
  std::vector<AggregatedInterests> out(metas.size());
  parallel_for(metas.size(), opts.threads, [&](size_t idx) {
    const ItemMeta& meta = metas[idx];
    std::vector<InterestSet> sets;
    sets.reserve(providers.size());
    for (ChatProvider* p : providers) {
      if (!meta.image_caption.empty()) {
        sets.push_back(mine_multimodal(*p, lib, meta).interests);
      } else {
        sets.push_back(mine_item_interests(*p, lib, meta));
      }
    }
    AggregatedInterests agg = aggregate_ensemble(sets, embedder, opts.merge_threshold);
    for (auto& interest : agg.interests) {
      interest.rldi_label = classify_rldi(rldi_provider, lib, interest, {meta});
    }
    out[idx] = std::move(agg);
  });
  return out;
}

}  // namespace sidrec
