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
// Chain-of-thought prompt templates and renderers. Templates live as text
// files with {placeholder} substitution; the compiled-in defaults below are
// the canonical bytes and tests keep the files in sync with them.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/corpus.hpp"
#include "sidrec/jsonl.hpp"

namespace sidrec {

namespace prompt_defaults {

inline constexpr const char* kDeepInterestExtraction =
    R"(Given user's Amazon interaction history, extract deep interests.

User History: {item_1}, {item_2}, ..., {item_n}

Step 1: Identify surface patterns (categories, brands).
Step 2: Infer latent motivations (lifestyle, values, scenarios).
Step 3: Predict cross-domain interests.

Output:
[Interest_1]: {text} | Confidence: {high/medium/low}
[Interest_2]: {text} | Confidence: {high/medium/low}
[Lifestyle]: {one_sentence_profile}
)";

inline constexpr const char* kMultimodalInterestExtraction =
    R"(Given product text and image, extract unified interests.

Title: {title}
Image: {image_description}

Step 1: Extract visual signals (style, aesthetic, lifestyle).
Step 2: Extract textual signals (function, emotion).
Step 3: Synthesize into unified interest tags.

Output:
Visual Tags: [{tag_1}, {tag_2}]
Text Tags: [{tag_1}, {tag_2}]
Unified Interests: [{interest_1}, {interest_2}]
)";

inline constexpr const char* kInterestEnsembleAggregation =
    R"(Aggregate interests from multiple LLMs into unified representation.

GPT-5.1 Output: [{interest_1}, {interest_2}, ...]
Gemini-3-Pro Output: [{interest_1}, {interest_2}, ...]
Kimi-K2-Thinking Output: [{interest_1}, {interest_2}, ...]
Grok-4 Output: [{interest_1}, {interest_2}, ...]

Step 1: Identify consensus interests (appear in 2+ LLMs).
Step 2: Merge semantically similar interests.
Step 3: Rank by frequency and confidence.
Step 4: Filter low-confidence or contradictory interests.

Output:
Consensus Interests: [{interest}, ...] | Support: {N}/4 LLMs
Unique Insights: [{interest}, ...] | Source: {LLM_name}
Final Ensemble: [{interest_1}, {interest_2}, ...]
)";

inline constexpr const char* kInterestQualityClassification =
    R"(Classify interest as 1 (positive) or 0 (negative).

Interest: "{interest_text}"
Source Items: {items}

Label = 1 if: Specific + Actionable + Authentic
Label = 0 if: Vague / Generic / Hallucinated / Contradictory

Output: Label: {0/1}
)";

inline constexpr const char* kVisualDescription =
    R"(Describe what the product image shows in one sentence.

Title: {title}
Caption: {caption}

Output: {one_sentence_visual_description}
)";

}  // namespace prompt_defaults

namespace detail {

inline bool replace_first(std::string& text, std::string_view from, std::string_view to) {
  const size_t pos = text.find(from);
  if (pos == std::string::npos) return false;
  text.replace(pos, from.size(), to);
  return true;
}

}  // namespace detail

struct PromptLibrary {
  std::string deep_interest = prompt_defaults::kDeepInterestExtraction;
  std::string multimodal_interest = prompt_defaults::kMultimodalInterestExtraction;
  std::string ensemble = prompt_defaults::kInterestEnsembleAggregation;
  std::string quality_classification = prompt_defaults::kInterestQualityClassification;
  std::string visual_description = prompt_defaults::kVisualDescription;

  static PromptLibrary defaults() { return PromptLibrary{}; }

  // Loads any template files present under dir; missing files keep defaults.
  static PromptLibrary from_dir(const std::filesystem::path& dir) {
    PromptLibrary lib;
    auto maybe = [&](const char* name, std::string& slot) {
      const auto path = dir / name;
      if (std::filesystem::exists(path)) slot = read_text_file(path);
    };
    maybe("deep_interest_extraction.txt", lib.deep_interest);
    maybe("multimodal_interest_extraction.txt", lib.multimodal_interest);
    maybe("interest_ensemble_aggregation.txt", lib.ensemble);
    maybe("interest_quality_classification.txt", lib.quality_classification);
    maybe("visual_description.txt", lib.visual_description);
    return lib;
  }

  static void write_files(const std::filesystem::path& dir) {
    write_text_file(dir / "deep_interest_extraction.txt",
                    prompt_defaults::kDeepInterestExtraction);
    write_text_file(dir / "multimodal_interest_extraction.txt",
                    prompt_defaults::kMultimodalInterestExtraction);
    write_text_file(dir / "interest_ensemble_aggregation.txt",
                    prompt_defaults::kInterestEnsembleAggregation);
    write_text_file(dir / "interest_quality_classification.txt",
                    prompt_defaults::kInterestQualityClassification);
    write_text_file(dir / "visual_description.txt", prompt_defaults::kVisualDescription);
  }
};

// Item-level mining prompt. With an image caption present this renders the
// multimodal template (the caption standing in for the image description);
// otherwise the history titles plus the item title fill the history slot.
inline std::string render_item_prompt(const PromptLibrary& lib, const ItemMeta& meta,
                                      const std::vector<ItemMeta>& history_context = {}) {
  require(!meta.title.empty(), ErrorKind::contract,
          "render_item_prompt: empty title for item " + meta.item_id);
  if (!meta.image_caption.empty()) {
    std::string out = lib.multimodal_interest;
    detail::replace_first(out, "{title}", meta.title);
    detail::replace_first(out, "{image_description}", meta.image_caption);
    return out;
  }
  std::vector<std::string> titles;
  for (const auto& h : history_context) titles.push_back(h.title);
  titles.push_back(meta.title);
  std::string out = lib.deep_interest;
  detail::replace_first(out, "{item_1}, {item_2}, ..., {item_n}", join(titles, ", "));
  return out;
}

inline std::string render_multimodal_prompt(const PromptLibrary& lib, const ItemMeta& meta,
                                            const std::string& visual_description) {
  require(!meta.title.empty(), ErrorKind::contract,
          "render_multimodal_prompt: empty title for item " + meta.item_id);
  std::string out = lib.multimodal_interest;
  detail::replace_first(out, "{title}", meta.title);
  detail::replace_first(out, "{image_description}", visual_description);
  return out;
}

inline std::string render_visual_description_prompt(const PromptLibrary& lib,
                                                    const ItemMeta& meta) {
  std::string out = lib.visual_description;
  detail::replace_first(out, "{title}", meta.title);
  detail::replace_first(out, "{caption}", meta.image_caption);
  return out;
}

// User-profile prompt: per-item interest summaries fill the history slot.
inline std::string render_user_profile_prompt(const PromptLibrary& lib,
                                              const std::vector<std::string>& summaries) {
  require(!summaries.empty(), ErrorKind::contract,
          "render_user_profile_prompt: no item summaries");
  std::string out = lib.deep_interest;
  detail::replace_first(out, "{item_1}, {item_2}, ..., {item_n}", join(summaries, ", "));
  return out;
}

// Ensemble template has four fixed provider slots; missing slots render [].
inline std::string render_ensemble_prompt(
    const PromptLibrary& lib, const std::vector<std::vector<std::string>>& provider_texts) {
  require(provider_texts.size() <= 4, ErrorKind::contract,
          "render_ensemble_prompt: template has 4 provider slots");
  std::string out = lib.ensemble;
  for (size_t slot = 0; slot < 4; ++slot) {
    std::string fill = "[]";
    if (slot < provider_texts.size()) {
      fill = "[" + join(provider_texts[slot], ", ") + "]";
    }
    detail::replace_first(out, "[{interest_1}, {interest_2}, ...]", fill);
  }
  return out;
}

inline std::string render_rldi_prompt(const PromptLibrary& lib, const std::string& interest_text,
                                      const std::vector<ItemMeta>& source_items) {
  require(!interest_text.empty(), ErrorKind::contract, "render_rldi_prompt: empty interest");
  std::vector<std::string> titles;
  for (const auto& m : source_items) titles.push_back(m.title);
  std::string out = lib.quality_classification;
  detail::replace_first(out, "{interest_text}", interest_text);
  detail::replace_first(out, "{items}", titles.empty() ? "(none)" : join(titles, ", "));
  return out;
}

}  // namespace sidrec
