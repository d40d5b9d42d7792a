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
// Corpus ingestion: review/metadata parsing, k-core filtering, chronological
// user sequences, and leave-last-out splits.

#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <istream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sidrec/common.hpp"
#include "sidrec/jsonl.hpp"

namespace sidrec {

struct Interaction {
  std::string user_id;
  std::string item_id;
  long long timestamp = 0;  // seconds since epoch, >= 0
};

struct ItemMeta {
  std::string item_id;
  std::string title;
  std::string description;
  std::vector<std::string> categories;
  std::string image_caption;  // empty when the item has no visual side
};

struct UserSequence {
  std::string user_id;
  std::vector<std::string> items;  // ascending by timestamp, stable ties
};

struct SplitExample {
  std::string user;
  std::vector<std::string> history;
  std::string target;
};

struct SplitDataset {
  std::vector<SplitExample> train;
  std::vector<SplitExample> valid;
  std::vector<SplitExample> test;
  std::set<std::string> item_universe;
};

struct ReviewsParseResult {
  std::vector<Interaction> interactions;
  size_t skipped = 0;
};

struct MetadataParseResult {
  std::vector<ItemMeta> items;
  size_t skipped = 0;
};

namespace detail {

inline std::string pick_string(const Json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    auto it = j.find(k);
    if (it != j.end() && it->is_string()) return it->get<std::string>();
  }
  return {};
}

inline long long pick_timestamp(const Json& j) {
  for (const char* k : {"ts", "timestamp", "unixReviewTime"}) {
    auto it = j.find(k);
    if (it != j.end() && it->is_number()) {
      return static_cast<long long>(it->get<double>());
    }
  }
  return -1;
}

}  // namespace detail

// Parses line-delimited review records. Accepted field spellings: `user` /
// `user_id` / `reviewerID`, `item` / `item_id` / `asin`, `ts` / `timestamp` /
// `unixReviewTime`. Malformed lines (bad JSON, missing or empty fields,
// negative timestamps) are skipped and counted; if they are the majority of
// non-blank lines the whole input is rejected as corrupt.
inline ReviewsParseResult parse_reviews(std::istream& in) {
  require(!in.fail(), ErrorKind::ingestion, "unreadable reviews stream");
  ReviewsParseResult out;
  size_t total = 0;
  std::string line;
  while (std::getline(in, line)) {
    const std::string s = trim(line);
    if (s.empty()) continue;
    ++total;
    const Json j = Json::parse(s, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      ++out.skipped;
      continue;
    }
    Interaction x;
    x.user_id = detail::pick_string(j, {"user", "user_id", "reviewerID"});
    x.item_id = detail::pick_string(j, {"item", "item_id", "asin"});
    x.timestamp = detail::pick_timestamp(j);
    if (x.user_id.empty() || x.item_id.empty() || x.timestamp < 0) {
      ++out.skipped;
      continue;
    }
    out.interactions.push_back(std::move(x));
  }
  require(in.eof() || !in.bad(), ErrorKind::ingestion, "reviews stream failed mid-read");
  if (total > 0 && out.skipped * 2 > total) {
    fail(ErrorKind::corrupt_input,
         "reviews input mostly malformed (" + std::to_string(out.skipped) + "/" +
             std::to_string(total) + " lines)");
  }
  return out;
}

inline ReviewsParseResult parse_reviews_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::ingestion, "cannot open reviews file " + path.string());
  return parse_reviews(in);
}

// Parses line-delimited item metadata. Records need a non-empty `item` (or
// `item_id` / `asin`) and `title`; description, categories, image_caption are
// optional. Amazon-style nested category lists are flattened one level.
inline MetadataParseResult parse_metadata(std::istream& in) {
  require(!in.fail(), ErrorKind::ingestion, "unreadable metadata stream");
  MetadataParseResult out;
  size_t total = 0;
  std::string line;
  while (std::getline(in, line)) {
    const std::string s = trim(line);
    if (s.empty()) continue;
    ++total;
    const Json j = Json::parse(s, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      ++out.skipped;
      continue;
    }
    ItemMeta m;
    m.item_id = detail::pick_string(j, {"item", "item_id", "asin"});
    m.title = trim(detail::pick_string(j, {"title"}));
    if (m.item_id.empty() || m.title.empty()) {
      ++out.skipped;
      continue;
    }
    m.description = detail::pick_string(j, {"description"});
    m.image_caption = detail::pick_string(j, {"image_caption", "caption"});
    auto cats = j.find("categories");
    if (cats != j.end() && cats->is_array()) {
      for (const auto& c : *cats) {
        if (c.is_string()) {
          m.categories.push_back(c.get<std::string>());
        } else if (c.is_array()) {
          for (const auto& inner : c) {
            if (inner.is_string()) m.categories.push_back(inner.get<std::string>());
          }
        }
      }
    }
    out.items.push_back(std::move(m));
  }
  if (total > 0 && out.skipped * 2 > total) {
    fail(ErrorKind::corrupt_input,
         "metadata input mostly malformed (" + std::to_string(out.skipped) + "/" +
             std::to_string(total) + " lines)");
  }
  return out;
}

inline MetadataParseResult parse_metadata_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::ingestion, "cannot open metadata file " + path.string());
  return parse_metadata(in);
}

// Iteratively removes users and items with fewer than k interactions until a
// fixpoint (the unique maximal k-core of the user-item bipartite multigraph).
// Input order is preserved among survivors.
inline std::vector<Interaction> kcore_filter(const std::vector<Interaction>& xs, int k) {
  require(k >= 1, ErrorKind::contract, "kcore_filter requires k >= 1");
  const size_t n = xs.size();
  std::unordered_map<std::string, std::vector<size_t>> by_user, by_item;
  std::unordered_map<std::string, int> user_count, item_count;
  for (size_t i = 0; i < n; ++i) {
    by_user[xs[i].user_id].push_back(i);
    by_item[xs[i].item_id].push_back(i);
  }
  for (const auto& [u, v] : by_user) user_count[u] = static_cast<int>(v.size());
  for (const auto& [m, v] : by_item) item_count[m] = static_cast<int>(v.size());

  // Peel entities whose degree fell below k; each peel decrements the
  // counterpart entity of every still-live interaction it touches.
  std::deque<std::pair<bool, std::string>> queue;  // (is_user, id)
  for (const auto& [u, c] : user_count) {
    if (c < k) queue.emplace_back(true, u);
  }
  for (const auto& [m, c] : item_count) {
    if (c < k) queue.emplace_back(false, m);
  }
  std::vector<char> live(n, 1);
  std::unordered_set<std::string> dead_users, dead_items;
  while (!queue.empty()) {
    auto [is_user, id] = queue.front();
    queue.pop_front();
    auto& dead = is_user ? dead_users : dead_items;
    if (!dead.insert(id).second) continue;
    const auto& idxs = is_user ? by_user[id] : by_item[id];
    for (size_t idx : idxs) {
      if (!live[idx]) continue;
      live[idx] = 0;
      const std::string& other = is_user ? xs[idx].item_id : xs[idx].user_id;
      auto& other_count = is_user ? item_count : user_count;
      const auto& other_dead = is_user ? dead_items : dead_users;
      if (--other_count[other] < k && !other_dead.count(other)) {
        queue.emplace_back(!is_user, other);
      }
    }
  }
  std::vector<Interaction> out;
  for (size_t i = 0; i < n; ++i) {
    if (live[i]) out.push_back(xs[i]);
  }
  return out;
}

// Groups interactions per user (in order of first appearance) and sorts each
// group ascending by timestamp with a stable tie-break on input order.
inline std::vector<UserSequence> build_sequences(const std::vector<Interaction>& xs) {
  std::vector<std::string> users;
  std::unordered_map<std::string, size_t> index_of;
  std::vector<std::vector<std::pair<long long, std::string>>> buckets;
  for (const auto& x : xs) {
    auto [it, fresh] = index_of.try_emplace(x.user_id, buckets.size());
    if (fresh) {
      users.push_back(x.user_id);
      buckets.emplace_back();
    }
    buckets[it->second].emplace_back(x.timestamp, x.item_id);
  }
  std::vector<UserSequence> out;
  out.reserve(users.size());
  for (size_t u = 0; u < users.size(); ++u) {
    auto& bucket = buckets[u];
    std::stable_sort(bucket.begin(), bucket.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    UserSequence s;
    s.user_id = users[u];
    s.items.reserve(bucket.size());
    for (auto& [ts, item] : bucket) s.items.push_back(std::move(item));
    out.push_back(std::move(s));
  }
  return out;
}

// Drops sequences shorter than min_len, returning survivors and the count of
// dropped sequences. Run this before leave_last_out_split, which rejects
// short sequences outright.
inline std::pair<std::vector<UserSequence>, size_t> drop_short_sequences(
    const std::vector<UserSequence>& seqs, size_t min_len) {
  std::vector<UserSequence> kept;
  size_t dropped = 0;
  for (const auto& s : seqs) {
    if (s.items.size() >= min_len) {
      kept.push_back(s);
    } else {
      ++dropped;
    }
  }
  return {std::move(kept), dropped};
}

// Leave-last-out protocol: per user, the last item is the test target, the
// second-to-last the validation target, and training pairs take every earlier
// prefix — targets at positions 2..T-2 — so the three splits cover disjoint
// positions and nothing from valid/test leaks into train.
inline SplitDataset leave_last_out_split(const std::vector<UserSequence>& seqs) {
  for (const auto& s : seqs) {
    require(s.items.size() >= 3, ErrorKind::contract,
            "leave_last_out_split: sequence for user " + s.user_id +
                " has fewer than 3 items");
  }
  SplitDataset ds;
  for (const auto& s : seqs) {
    const size_t t = s.items.size();
    for (const auto& item : s.items) ds.item_universe.insert(item);
    auto prefix = [&](size_t len) {
      return std::vector<std::string>(s.items.begin(), s.items.begin() + len);
    };
    for (size_t p = 2; p + 2 <= t; ++p) {
      ds.train.push_back({s.user_id, prefix(p - 1), s.items[p - 1]});
    }
    ds.valid.push_back({s.user_id, prefix(t - 2), s.items[t - 2]});
    ds.test.push_back({s.user_id, prefix(t - 1), s.items[t - 1]});
  }
  return ds;
}

// ---- Artifact IO ----------------------------------------------------------

inline Json split_example_to_json(const SplitExample& e) {
  return Json{{"user", e.user}, {"history", e.history}, {"target", e.target}};
}

inline SplitExample split_example_from_json(const Json& j) {
  SplitExample e;
  e.user = j.at("user").get<std::string>();
  e.history = j.at("history").get<std::vector<std::string>>();
  e.target = j.at("target").get<std::string>();
  return e;
}

inline void write_split(const std::filesystem::path& dir, const SplitDataset& ds) {
  auto dump = [&](const char* name, const std::vector<SplitExample>& part) {
    std::vector<Json> records;
    records.reserve(part.size());
    for (const auto& e : part) records.push_back(split_example_to_json(e));
    write_jsonl_file(dir / (std::string(name) + ".jsonl"), records);
  };
  dump("train", ds.train);
  dump("valid", ds.valid);
  dump("test", ds.test);
}

inline SplitDataset read_split(const std::filesystem::path& dir) {
  SplitDataset ds;
  auto load = [&](const char* name, std::vector<SplitExample>& part) {
    for (const auto& j : read_jsonl_file(dir / (std::string(name) + ".jsonl"))) {
      part.push_back(split_example_from_json(j));
      ds.item_universe.insert(part.back().target);
      for (const auto& item : part.back().history) ds.item_universe.insert(item);
    }
  };
  load("train", ds.train);
  load("valid", ds.valid);
  load("test", ds.test);
  return ds;
}

inline void write_metadata(const std::filesystem::path& path,
                           const std::vector<ItemMeta>& items) {
  std::vector<Json> records;
  records.reserve(items.size());
  for (const auto& m : items) {
    Json j{{"item", m.item_id}, {"title", m.title}};
    if (!m.description.empty()) j["description"] = m.description;
    if (!m.categories.empty()) j["categories"] = m.categories;
    if (!m.image_caption.empty()) j["image_caption"] = m.image_caption;
    records.push_back(std::move(j));
  }
  write_jsonl_file(path, records);
}

inline std::vector<ItemMeta> read_metadata(const std::filesystem::path& path) {
  auto parsed = parse_metadata_file(path);
  return parsed.items;
}

}  // namespace sidrec
