/*
 * Copyright 2026 The smadp Authors.
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

#include "smadp/accountant.hpp"
#include "smadp/csv.hpp"
#include "smadp/data.hpp"
#include "smadp/error.hpp"
#include "smadp/memory.hpp"
#include "smadp/model.hpp"
#include "smadp/numerics.hpp"
#include "smadp/optimizer.hpp"
#include "smadp/run.hpp"
#include "smadp/spectral.hpp"
