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

#include "droplm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace droplm {

namespace {
bool is_special(const std::string& t) {
  return t == kSosToken || t == kEosToken || t == kUnkToken;
}
}  // namespace

void Vocabulary::push(const std::string& token) {
  token_to_id_.emplace(token, std::int32_t(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& tokens, int min_count) {
  if (tokens.empty()) throw ConfigError("cannot build vocabulary from an empty corpus");
  if (min_count < 1) throw ConfigError("corpus.min_count must be >= 1");
  std::unordered_map<std::string, std::int64_t> counts;
  for (const auto& t : tokens)
    if (!is_special(t)) ++counts[t];

  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.push(kSosToken);
  v.push(kEosToken);
  v.push(kUnkToken);
  for (const auto& [token, count] : ranked)
    if (count >= min_count) v.push(token);
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write vocabulary file: " + path.string());
  for (const auto& t : id_to_token_) os << t << '\n';
  if (!os) throw IoError("failed writing vocabulary file: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read vocabulary file: " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    v.push(line);
  }
  if (v.size() < 3 || v.id_to_token_[0] != kSosToken || v.id_to_token_[1] != kEosToken ||
      v.id_to_token_[2] != kUnkToken)
    throw IoError("not a vocabulary file (missing specials): " + path.string());
  return v;
}

std::vector<std::int32_t> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                                 bool wrap) {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size() + (wrap ? 2 : 0));
  if (wrap) ids.push_back(Vocabulary::sos);
  for (const auto& t : tokens) ids.push_back(vocab.id_or_unk(t));
  if (wrap) ids.push_back(Vocabulary::eos);
  return ids;
}

std::vector<std::string> decode(const std::vector<std::int32_t>& ids, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (std::int32_t id : ids) {
    if (id < 0 || id >= vocab.size())
      throw ConfigError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(vocab.size()));
    tokens.push_back(vocab.token(id));
  }
  return tokens;
}

std::vector<std::vector<std::string>> read_token_lines(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read corpus file: " + path.string());
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<std::string> toks;
    std::string tok;
    while (ls >> tok) toks.push_back(tok);
    if (!toks.empty()) lines.push_back(std::move(toks));
  }
  return lines;
}

std::vector<std::string> flatten_with_eos(const std::vector<std::vector<std::string>>& lines) {
  std::vector<std::string> out;
  for (const auto& l : lines) {
    out.insert(out.end(), l.begin(), l.end());
    out.push_back(kEosToken);
  }
  return out;
}

BatchStream::BatchStream(const std::vector<std::int32_t>& ids, std::size_t batch_size,
                         std::size_t bptt_len)
    : batch_(batch_size), bptt_(bptt_len) {
  if (batch_size < 1) throw ConfigError("trainer.batch_size must be >= 1");
  if (bptt_len < 1) throw ConfigError("trainer.bptt must be >= 1");
  steps_ = ids.size() / batch_size;
  if (steps_ < 2)
    throw ConfigError("corpus too short: " + std::to_string(ids.size()) +
                      " tokens cannot fill batch_size " + std::to_string(batch_size) +
                      " with at least 2 steps");
  data_.resize(batch_ * steps_);
  for (std::size_t b = 0; b < batch_; ++b)
    for (std::size_t t = 0; t < steps_; ++t) data_[b * steps_ + t] = ids[b * steps_ + t];
}

std::vector<std::int32_t> BatchStream::Chunk::x_col(std::size_t i) const {
  std::vector<std::int32_t> col(stream->batch_size());
  for (std::size_t b = 0; b < col.size(); ++b) col[b] = x(b, i);
  return col;
}

std::vector<std::int32_t> BatchStream::Chunk::y_col(std::size_t i) const {
  std::vector<std::int32_t> col(stream->batch_size());
  for (std::size_t b = 0; b < col.size(); ++b) col[b] = y(b, i);
  return col;
}

std::optional<BatchStream::Chunk> BatchStream::next() {
  const std::size_t last = steps_ - 1;  // final column has no target
  if (cursor_ >= last) return std::nullopt;
  std::size_t width = std::min(bptt_, last - cursor_);
  Chunk c{this, cursor_, width};
  cursor_ += width;
  return c;
}

}  // namespace droplm
