// Copyright 2026 The droplm Authors
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

#include <cstdint>
#include <filesystem>
#include <string>

#include "droplm/model.hpp"
#include "droplm/trainer.hpp"

namespace droplm {

// Full description of a run. Accepted as flat `key = value` text with dotted
// sections or as JSON (nested objects flatten to dotted keys); unknown keys
// are rejected by name. resolved_text() prints every key with its final
// value, so a run can be reproduced from its output directory alone.
struct RunConfig {
  std::string corpus_train;
  std::string corpus_valid;
  std::string corpus_test;
  int min_count = 1;
  std::string out_dir = "run";
  Arch arch = Arch::LSTM;
  int e_s = 300;
  int h = 300;
  TrainConfig trainer;
  std::string precision = "f32";
  std::uint64_t seed_model = 1;
  std::uint64_t seed_data = 2;

  static RunConfig parse_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  std::string resolved_text() const;
  void validate() const;
};

const char* variant_name(DropoutVariant v);
DropoutVariant variant_from_name(const std::string& s);
const char* site_name(DropoutSite s);
DropoutSite site_from_name(const std::string& s);

}  // namespace droplm
