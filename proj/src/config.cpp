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

#include "droplm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "droplm/errors.hpp"

namespace droplm {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  double out = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key " + key + ": cannot parse number from '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  double d = to_double(key, v);
  int i = int(d);
  if (double(i) != d) throw ConfigError("config key " + key + ": expected integer, got '" + v + "'");
  return i;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  unsigned long long out = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key " + key + ": cannot parse seed from '" + v + "'");
  return out;
}

// key = value lines; '#' starts a comment; blank lines skipped.
std::map<std::string, std::string> parse_flat(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value': " +
                        line);
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has no key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::map<std::string, std::string>& kv) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_json(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), kv);
    return;
  }
  if (j.is_string())
    kv[prefix] = j.get<std::string>();
  else
    kv[prefix] = j.dump();
}

}  // namespace

const char* variant_name(DropoutVariant v) {
  switch (v) {
    case DropoutVariant::None: return "none";
    case DropoutVariant::Standard: return "standard";
    case DropoutVariant::Gaussian: return "gaussian";
    case DropoutVariant::Variational: return "variational";
    case DropoutVariant::Concrete: return "concrete";
    case DropoutVariant::CurriculumLinear: return "curriculum_linear";
    case DropoutVariant::CurriculumExp: return "curriculum_exp";
    case DropoutVariant::CurriculumSigmoid: return "curriculum_sigmoid";
  }
  return "none";
}

DropoutVariant variant_from_name(const std::string& s) {
  if (s == "none") return DropoutVariant::None;
  if (s == "standard") return DropoutVariant::Standard;
  if (s == "gaussian") return DropoutVariant::Gaussian;
  if (s == "variational") return DropoutVariant::Variational;
  if (s == "concrete") return DropoutVariant::Concrete;
  if (s == "curriculum_linear" || s == "clinear") return DropoutVariant::CurriculumLinear;
  if (s == "curriculum_exp" || s == "cexp") return DropoutVariant::CurriculumExp;
  if (s == "curriculum_sigmoid" || s == "csigmoid") return DropoutVariant::CurriculumSigmoid;
  throw ConfigError("config key dropout.variant: unknown variant '" + s + "'");
}

const char* site_name(DropoutSite s) {
  switch (s) {
    case DropoutSite::Input: return "input";
    case DropoutSite::Hidden: return "hidden";
    case DropoutSite::Output: return "output";
    case DropoutSite::All: return "all";
  }
  return "all";
}

DropoutSite site_from_name(const std::string& s) {
  if (s == "input") return DropoutSite::Input;
  if (s == "hidden") return DropoutSite::Hidden;
  if (s == "output") return DropoutSite::Output;
  if (s == "all") return DropoutSite::All;
  throw ConfigError("config key dropout.site: unknown site '" + s + "'");
}

RunConfig RunConfig::parse_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::string body = trim(text);
  if (!body.empty() && body[0] == '{') {
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid json");
    flatten_json(j, "", kv);
  } else {
    kv = parse_flat(text);
  }

  RunConfig rc;
  for (const auto& [key, value] : kv) {
    if (key == "corpus.train") rc.corpus_train = value;
    else if (key == "corpus.valid") rc.corpus_valid = value;
    else if (key == "corpus.test") rc.corpus_test = value;
    else if (key == "corpus.min_count") rc.min_count = to_int(key, value);
    else if (key == "out_dir") rc.out_dir = value;
    else if (key == "arch") rc.arch = arch_from_name(value);
    else if (key == "dims.embedding") rc.e_s = to_int(key, value);
    else if (key == "dims.hidden") rc.h = to_int(key, value);
    else if (key == "trainer.epochs") rc.trainer.epochs = to_int(key, value);
    else if (key == "trainer.batch_size") rc.trainer.batch_size = to_int(key, value);
    else if (key == "trainer.bptt") rc.trainer.bptt_len = to_int(key, value);
    else if (key == "trainer.lr0") rc.trainer.lr0 = to_double(key, value);
    else if (key == "trainer.lr_decay") {
      // "exp" selects decay by exp(-1); a number in (0,1) is used directly.
      if (value == "exp") {
        rc.trainer.exp_decay = true;
      } else {
        rc.trainer.exp_decay = false;
        rc.trainer.lr_decay = to_double(key, value);
      }
    } else if (key == "trainer.clip_norm") rc.trainer.clip_norm = to_double(key, value);
    else if (key == "precision") rc.precision = value;
    else if (key == "seed.model") rc.seed_model = to_u64(key, value);
    else if (key == "seed.data") rc.seed_data = to_u64(key, value);
    else if (key == "dropout.variant") rc.trainer.dropout.variant = variant_from_name(value);
    else if (key == "dropout.site") rc.trainer.dropout.site = site_from_name(value);
    else if (key == "dropout.p_d") rc.trainer.dropout.p_d = to_double(key, value);
    else if (key == "dropout.p_max") rc.trainer.dropout.p_max = to_double(key, value);
    else if (key == "dropout.tau") rc.trainer.dropout.tau = to_double(key, value);
    else if (key == "dropout.eps") rc.trainer.dropout.eps = to_double(key, value);
    else if (key == "dropout.lambda") rc.trainer.dropout.lambda = to_double(key, value);
    else if (key == "dropout.init_p") rc.trainer.dropout.init_p = to_double(key, value);
    else throw ConfigError("unknown config key: " + key);
  }
  rc.validate();
  return rc;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  auto emit = [&out](const std::string& key, const std::string& value) {
    out << key << " = " << value << "\n";
  };
  emit("arch", arch_name(arch));
  emit("corpus.min_count", std::to_string(min_count));
  emit("corpus.test", corpus_test);
  emit("corpus.train", corpus_train);
  emit("corpus.valid", corpus_valid);
  emit("dims.embedding", std::to_string(e_s));
  emit("dims.hidden", std::to_string(h));
  emit("dropout.eps", detail::fmt_g17(trainer.dropout.eps));
  emit("dropout.init_p", detail::fmt_g17(trainer.dropout.init_p));
  emit("dropout.lambda", detail::fmt_g17(trainer.dropout.lambda));
  emit("dropout.p_d", detail::fmt_g17(trainer.dropout.p_d));
  emit("dropout.p_max", detail::fmt_g17(trainer.dropout.p_max));
  emit("dropout.site", site_name(trainer.dropout.site));
  emit("dropout.tau", detail::fmt_g17(trainer.dropout.tau));
  emit("dropout.variant", variant_name(trainer.dropout.variant));
  emit("out_dir", out_dir);
  emit("precision", precision);
  emit("seed.data", std::to_string(seed_data));
  emit("seed.model", std::to_string(seed_model));
  emit("trainer.batch_size", std::to_string(trainer.batch_size));
  emit("trainer.bptt", std::to_string(trainer.bptt_len));
  emit("trainer.clip_norm", detail::fmt_g17(trainer.clip_norm));
  emit("trainer.epochs", std::to_string(trainer.epochs));
  emit("trainer.lr0", detail::fmt_g17(trainer.lr0));
  emit("trainer.lr_decay", trainer.exp_decay ? "exp" : detail::fmt_g17(trainer.lr_decay));
  return out.str();
}

void RunConfig::validate() const {
  if (min_count < 1) throw ConfigError("config key corpus.min_count must be at least 1");
  if (e_s < 1) throw ConfigError("config key dims.embedding must be positive");
  if (h < 1) throw ConfigError("config key dims.hidden must be positive");
  if (precision != "f32" && precision != "f64")
    throw ConfigError("config key precision must be f32 or f64, got '" + precision + "'");
  trainer.validate();
}

}  // namespace droplm
