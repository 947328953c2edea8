/*
 * Copyright 2026 The droplm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "droplm/errors.hpp"

namespace droplm {

inline constexpr const char* kSosToken = "<sos>";
inline constexpr const char* kEosToken = "<eos>";
inline constexpr const char* kUnkToken = "<unk>";

// Token <-> id mapping. Ids are dense; the three specials always occupy
// 0 (<sos>), 1 (<eos>), 2 (<unk>), followed by corpus tokens ordered by
// count descending, ties broken lexicographically, so identical corpora
// produce identical vocabularies.
class Vocabulary {
 public:
  static Vocabulary build(const std::vector<std::string>& tokens, int min_count = 1);

  int size() const { return int(id_to_token_.size()); }
  static constexpr std::int32_t sos = 0;
  static constexpr std::int32_t eos = 1;
  static constexpr std::int32_t unk = 2;

  // -1 when the token is unknown.
  std::int32_t lookup(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? -1 : it->second;
  }

  std::int32_t id_or_unk(const std::string& token) const {
    std::int32_t id = lookup(token);
    return id < 0 ? unk : id;
  }

  const std::string& token(std::int32_t id) const { return id_to_token_.at(id); }

  // One token per line, in id order. Round-trips byte for byte.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  Vocabulary() = default;
  void push(const std::string& token);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;
};

std::vector<std::int32_t> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                                 bool wrap);
std::vector<std::string> decode(const std::vector<std::int32_t>& ids, const Vocabulary& vocab);

// Whitespace-tokenized lines of a UTF-8 text file; blank lines are dropped.
std::vector<std::vector<std::string>> read_token_lines(const std::filesystem::path& path);

// Flat training stream: each line's tokens followed by <eos>.
std::vector<std::string> flatten_with_eos(const std::vector<std::vector<std::string>>& lines);

// Contiguous batching: the id stream is split into batch_size rows of
// floor(len/batch_size) steps, trailing remainder dropped. next() walks the
// time axis in chunks of at most bptt_len columns, where X is columns
// [c, c+w) and Y the same columns shifted one step right, so consecutive
// chunks continue each row exactly where the previous one stopped.
class BatchStream {
 public:
  BatchStream() = default;
  BatchStream(const std::vector<std::int32_t>& ids, std::size_t batch_size, std::size_t bptt_len);

  struct Chunk {
    const BatchStream* stream;
    std::size_t offset;
    std::size_t width;

    std::int32_t x(std::size_t b, std::size_t i) const { return stream->at(b, offset + i); }
    std::int32_t y(std::size_t b, std::size_t i) const { return stream->at(b, offset + i + 1); }
    std::vector<std::int32_t> x_col(std::size_t i) const;
    std::vector<std::int32_t> y_col(std::size_t i) const;
  };

  // End of epoch yields nullopt; reset() rewinds for the next pass.
  std::optional<Chunk> next();
  void reset() { cursor_ = 0; }

  std::size_t batch_size() const { return batch_; }
  std::size_t steps() const { return steps_; }
  std::size_t bptt_len() const { return bptt_; }
  std::size_t target_count() const { return batch_ * (steps_ - 1); }

  std::int32_t at(std::size_t b, std::size_t t) const { return data_[b * steps_ + t]; }

 private:
  std::vector<std::int32_t> data_;
  std::size_t batch_ = 0;
  std::size_t steps_ = 0;
  std::size_t bptt_ = 0;
  std::size_t cursor_ = 0;
};

inline BatchStream batchify(const std::vector<std::int32_t>& ids, std::size_t batch_size,
                            std::size_t bptt_len) {
  return BatchStream(ids, batch_size, bptt_len);
}

}  // namespace droplm
