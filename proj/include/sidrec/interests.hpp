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
// Interest record types shared by the mining, embedding, and reward stages.

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/jsonl.hpp"

namespace sidrec {

struct Interest {
  std::string text;
  double confidence = 0.0;          // in [0, 1]
  std::set<std::string> sources;    // provider ids that produced it
  int rldi_label = -1;              // 1 specific/actionable, 0 vague, -1 unset
};

inline bool is_consensus(const Interest& i) { return i.sources.size() >= 2; }

// One provider's mined interests for one item.
struct InterestSet {
  std::string item_id;
  std::vector<Interest> interests;
  std::string provider;
};

// Ensemble-merged interests for one item, ordered by support desc, then
// confidence desc, then text lexicographically.
struct AggregatedInterests {
  std::string item_id;
  std::vector<Interest> interests;
  int J = 0;  // == interests.size()
};

struct UserProfile {
  std::string user_id;
  std::vector<Interest> interests;
  std::string lifestyle;  // one-sentence summary
};

inline Json interest_to_json(const Interest& i) {
  Json j{{"text", i.text}, {"confidence", i.confidence}};
  j["sources"] = std::vector<std::string>(i.sources.begin(), i.sources.end());
  if (i.rldi_label >= 0) j["rldi"] = i.rldi_label;
  return j;
}

inline Interest interest_from_json(const Json& j) {
  Interest i;
  i.text = j.at("text").get<std::string>();
  i.confidence = j.at("confidence").get<double>();
  if (j.contains("sources")) {
    for (const auto& s : j.at("sources")) i.sources.insert(s.get<std::string>());
  }
  if (j.contains("rldi")) i.rldi_label = j.at("rldi").get<int>();
  return i;
}

// Interests file: one record per item, {item, interests:[...]}.
inline void write_interests_file(const std::filesystem::path& path,
                                 const std::vector<AggregatedInterests>& all) {
  std::vector<Json> records;
  records.reserve(all.size());
  for (const auto& agg : all) {
    Json j{{"item", agg.item_id}};
    Json arr = Json::array();
    for (const auto& i : agg.interests) arr.push_back(interest_to_json(i));
    j["interests"] = std::move(arr);
    records.push_back(std::move(j));
  }
  write_jsonl_file(path, records);
}

inline std::vector<AggregatedInterests> read_interests_file(
    const std::filesystem::path& path) {
  std::vector<AggregatedInterests> all;
  for (const auto& j : read_jsonl_file(path)) {
    AggregatedInterests agg;
    agg.item_id = j.at("item").get<std::string>();
    for (const auto& ij : j.at("interests")) {
      agg.interests.push_back(interest_from_json(ij));
    }
    agg.J = static_cast<int>(agg.interests.size());
    all.push_back(std::move(agg));
  }
  return all;
}

}  // namespace sidrec
