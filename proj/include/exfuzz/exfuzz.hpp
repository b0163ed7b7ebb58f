/*
 * Copyright 2026 The ExciteFuzz Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "exfuzz/attribution.hpp"
#include "exfuzz/coalition.hpp"
#include "exfuzz/coverage.hpp"
#include "exfuzz/dataset.hpp"
#include "exfuzz/defects.hpp"
#include "exfuzz/error.hpp"
#include "exfuzz/fitness.hpp"
#include "exfuzz/fuzzer.hpp"
#include "exfuzz/io.hpp"
#include "exfuzz/metrics.hpp"
#include "exfuzz/model_io.hpp"
#include "exfuzz/network.hpp"
#include "exfuzz/retrain.hpp"
#include "exfuzz/rng.hpp"
#include "exfuzz/tensor.hpp"
#include "exfuzz/training.hpp"

#define EXFUZZ_VERSION_STRING "0.1.0"
