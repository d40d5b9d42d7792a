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

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sidrec/common.hpp"

namespace sidrec {

using Json = nlohmann::json;

// Reads a line-delimited JSON file. Blank lines are ignored; a line that does
// not parse is passed to on_bad (return false from it to abort).
inline void for_each_jsonl_line(
    std::istream& in, const std::function<void(const Json&)>& on_record,
    const std::function<void(const std::string&)>& on_bad = nullptr) {
  std::string line;
  while (std::getline(in, line)) {
    const std::string stripped = trim(line);
    if (stripped.empty()) {
      continue;
    }
    Json record = Json::parse(stripped, nullptr, false);
    if (record.is_discarded()) {
      if (on_bad) {
        on_bad(stripped);
      }
      continue;
    }
    on_record(record);
  }
}

inline std::vector<Json> read_jsonl_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  std::vector<Json> records;
  for_each_jsonl_line(in, [&](const Json& j) { records.push_back(j); },
                      [&](const std::string& bad) {
                        fail(ErrorKind::io, "bad json line in " + path.string() + ": " + bad);
                      });
  return records;
}

inline void write_jsonl_file(const std::filesystem::path& path,
                             const std::vector<Json>& records) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot write " + path.string());
  for (const auto& record : records) {
    out << record.dump() << "\n";
  }
  require(out.good(), ErrorKind::io, "write failed for " + path.string());
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  Json j = Json::parse(in, nullptr, false);
  require(!j.is_discarded(), ErrorKind::io, "invalid json in " + path.string());
  return j;
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace sidrec
