/*
 * Copyright 2026 The smoothcert Authors
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

#include "smoothcert/bounds.hpp"
#include "smoothcert/data_io.hpp"
#include "smoothcert/dataset.hpp"
#include "smoothcert/matrix.hpp"
#include "smoothcert/mlp.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/sigma_select.hpp"
#include "smoothcert/smoothing.hpp"
#include "smoothcert/special.hpp"
#include "smoothcert/spectral.hpp"
#include "smoothcert/train.hpp"
