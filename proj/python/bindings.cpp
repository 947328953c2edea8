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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <string>
#include <vector>

#include "droplm/analysis.hpp"
#include "droplm/trainer.hpp"

namespace py = pybind11;
using namespace droplm;

namespace {

DropoutVariant variant_from(const std::string& name) {
  if (name == "none") return DropoutVariant::None;
  if (name == "standard") return DropoutVariant::Standard;
  if (name == "gaussian") return DropoutVariant::Gaussian;
  if (name == "variational") return DropoutVariant::Variational;
  if (name == "concrete") return DropoutVariant::Concrete;
  if (name == "curriculum_linear") return DropoutVariant::CurriculumLinear;
  if (name == "curriculum_exp") return DropoutVariant::CurriculumExp;
  if (name == "curriculum_sigmoid") return DropoutVariant::CurriculumSigmoid;
  throw ConfigError("unknown dropout variant: " + name);
}

DropoutSite site_from(const std::string& name) {
  if (name == "input") return DropoutSite::Input;
  if (name == "hidden") return DropoutSite::Hidden;
  if (name == "output") return DropoutSite::Output;
  if (name == "all") return DropoutSite::All;
  throw ConfigError("unknown dropout site: " + name);
}

Arch arch_from(const std::string& name) {
  if (name == "lstm") return Arch::LSTM;
  if (name == "gru") return Arch::GRU;
  if (name == "highway") return Arch::Highway;
  throw ConfigError("unknown arch: " + name);
}

ScheduleKind kind_from(const std::string& name) {
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "exp") return ScheduleKind::Exp;
  if (name == "sigmoid") return ScheduleKind::Sigmoid;
  throw ConfigError("unknown schedule kind: " + name);
}

std::vector<std::int32_t> ids_for(const Vocabulary& vocab,
                                  const std::vector<std::string>& tokens) {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_or_unk(t));
  return ids;
}

// The f32 core with its vocabulary; everything the CLI can do to a trained
// model goes through this handle.
struct Model {
  Vocabulary vocab;
  ModelParams<float> params;
  std::vector<py::dict> log_rows;

  std::vector<std::int32_t> ids_of(const std::vector<std::string>& tokens) const {
    return ids_for(vocab, tokens);
  }

  double evaluate_tokens(const std::vector<std::string>& tokens, std::size_t batch_size,
                         std::size_t bptt) const {
    return evaluate(params, ids_of(tokens), batch_size, bptt);
  }

  py::dict stats(const std::vector<std::string>& tokens, std::size_t T) const {
    PerStepStats s = per_step_stats(params, ids_of(tokens), T);
    py::dict d;
    std::vector<std::size_t> t_idx(s.T);
    for (std::size_t t = 0; t < s.T; ++t) t_idx[t] = t;
    d["T"] = s.T;
    d["t"] = t_idx;
    d["mean_ppl"] = s.mean_ppl;
    d["mad_lower"] = s.mad_lower;
    d["mad_upper"] = s.mad_upper;
    d["std"] = s.std_dev;
    d["n"] = s.n;
    return d;
  }

  std::vector<std::string> sample(const std::vector<std::string>& seed_text, std::size_t length,
                                  std::uint64_t rng_seed) const {
    std::vector<std::int32_t> seed_ids =
        seed_text.empty() ? std::vector<std::int32_t>{Vocabulary::sos} : ids_of(seed_text);
    Rng rng(rng_seed);
    return decode(generate(params, seed_ids, length, rng), vocab);
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    save_checkpoint(params, dir / "model.dlm");
    vocab.save(dir / "vocab.txt");
  }
};

py::dict row_dict(const EpochLog& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["train_loss"] = e.train_loss;
  d["val_ppl"] = e.val_ppl;
  d["lr"] = e.lr;
  d["p_d"] = e.p_d;
  d["seconds"] = e.seconds;
  return d;
}

Model train_tokens(const std::vector<std::string>& train, const std::vector<std::string>& valid,
                   const std::string& arch, std::size_t embedding, std::size_t hidden, int epochs,
                   std::size_t batch_size, std::size_t bptt, double lr0, double lr_decay,
                   bool exp_decay, double clip_norm, const std::string& dropout,
                   const std::string& site, double p_d, double p_max, double tau, double eps,
                   double lambda, double init_p, int min_count, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.bptt_len = bptt;
  cfg.lr0 = lr0;
  cfg.lr_decay = lr_decay;
  cfg.exp_decay = exp_decay;
  cfg.clip_norm = clip_norm;
  cfg.dropout = DropoutSpec{.variant = variant_from(dropout), .site = site_from(site),
                            .p_d = p_d, .p_max = p_max, .tau = tau, .eps = eps,
                            .lambda = lambda, .init_p = init_p};
  cfg.validate();

  auto vocab = Vocabulary::build(train, min_count);
  Rng rng(seed);
  auto params = ModelParams<float>::init(arch_from(arch), int(vocab.size()), int(embedding),
                                         int(hidden), rng);
  Trainer<float> tr(cfg, std::move(params), rng, ids_for(vocab, train), ids_for(vocab, valid));
  tr.run();
  Model out{std::move(vocab), tr.best().clone(), {}};
  for (const auto& e : tr.log().epochs) out.log_rows.push_back(row_dict(e));
  return out;
}

Model load_model(const std::filesystem::path& dir) {
  auto params = load_checkpoint<float>(dir / "model.dlm");
  auto vocab = Vocabulary::load(dir / "vocab.txt");
  if (int(vocab.size()) != params.vocab)
    throw ConfigError("vocabulary size does not match checkpoint");
  return Model{std::move(vocab), std::move(params), {}};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Recurrent language models with dropout variants";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<IoError>(m, "IoError");
  py::register_exception<NumericalError>(m, "NumericalError");

  m.def("schedule_value",
        [](const std::string& kind, int i, int n, double p_max) {
          return schedule_value(kind_from(kind), i, n, p_max);
        },
        py::arg("kind"), py::arg("i"), py::arg("n"), py::arg("p_max"));

  m.def("schedule_values",
        [](const std::string& kind, int epochs, double p_max) {
          std::vector<double> out;
          for (int i = 0; i <= epochs; ++i)
            out.push_back(schedule_value(kind_from(kind), i, epochs, p_max));
          return out;
        },
        py::arg("kind"), py::arg("epochs"), py::arg("p_max"));

  m.def("bernoulli_mask",
        [](std::size_t n, double p_d, std::uint64_t seed) {
          Rng rng(seed);
          auto t = bernoulli_mask<double>(1, n, p_d, rng);
          return std::vector<double>(t.data(), t.data() + t.size());
        },
        py::arg("n"), py::arg("p_d"), py::arg("seed") = 0);

  m.def("gaussian_mask",
        [](std::size_t n, double p_d, std::uint64_t seed) {
          Rng rng(seed);
          auto t = gaussian_mask<double>(1, n, p_d, rng);
          return std::vector<double>(t.data(), t.data() + t.size());
        },
        py::arg("n"), py::arg("p_d"), py::arg("seed") = 0);

  py::class_<Model>(m, "Model")
      .def_property_readonly("vocab_size", [](const Model& s) { return s.vocab.size(); })
      .def_property_readonly("log", [](const Model& s) { return s.log_rows; })
      .def("evaluate", &Model::evaluate_tokens, py::arg("tokens"),
           py::arg("batch_size") = 10, py::arg("bptt") = 30)
      .def("per_step_stats", &Model::stats, py::arg("tokens"), py::arg("t") = 10)
      .def("generate", &Model::sample, py::arg("seed_text") = std::vector<std::string>{},
           py::arg("length") = 20, py::arg("seed") = 0)
      .def("save", &Model::save, py::arg("directory"));

  m.def("train", &train_tokens, py::arg("train"), py::arg("valid"), py::arg("arch") = "lstm",
        py::arg("embedding") = 64, py::arg("hidden") = 64, py::arg("epochs") = 5,
        py::arg("batch_size") = 20, py::arg("bptt") = 30, py::arg("lr0") = 10.0,
        py::arg("lr_decay") = 0.3, py::arg("exp_decay") = false, py::arg("clip_norm") = 0.3,
        py::arg("dropout") = "none", py::arg("site") = "all", py::arg("p_d") = 0.2,
        py::arg("p_max") = 0.3, py::arg("tau") = 0.1, py::arg("eps") = 1e-6,
        py::arg("lambda_") = 0.1, py::arg("init_p") = 0.95, py::arg("min_count") = 1,
        py::arg("seed") = 0);

  m.def("load", &load_model, py::arg("directory"));
}
