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
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

namespace droplm {

// All stochastic behavior in the library flows through one of these. The
// engine is the only state; distribution objects are constructed fresh per
// draw so serializing the engine captures the full stream position.
// Draws are made in double and narrowed by the caller when needed, keeping
// the consumed random sequence identical across scalar precisions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }

  std::uint64_t next_u64() { return eng_(); }

  void save(std::ostream& os) const { os << eng_; }
  void load(std::istream& is) { is >> eng_; }

  std::string state_string() const {
    std::ostringstream os;
    save(os);
    return os.str();
  }

  void restore_state(const std::string& s) {
    std::istringstream is(s);
    load(is);
  }

  bool operator==(const Rng& other) const { return eng_ == other.eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace droplm
