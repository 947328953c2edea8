# Copyright 2026 The droplm Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Recurrent word-level language models with dropout variants.

Tokens are plain strings; a stream is a flat list of them (include "<eos>"
markers yourself if sentence boundaries matter). `train` builds the
vocabulary from the training stream, fits the f32 core, and returns the
best-validation model.

    import droplm
    m = droplm.train(train_tokens, valid_tokens, epochs=3, hidden=64)
    m.evaluate(test_tokens)
    m.per_step_stats(test_tokens, t=10)
    m.generate(["the"], length=20, seed=1)
    m.save("run_dir")           # model.dlm + vocab.txt
    m2 = droplm.load("run_dir")
"""

from droplm._core import (
    ConfigError,
    IoError,
    Model,
    NumericalError,
    bernoulli_mask,
    gaussian_mask,
    load,
    schedule_value,
    schedule_values,
    train,
)

__all__ = [
    "ConfigError",
    "IoError",
    "Model",
    "NumericalError",
    "bernoulli_mask",
    "gaussian_mask",
    "load",
    "schedule_value",
    "schedule_values",
    "train",
]
