/*
 * Copyright 2026 The MRL Authors. All Rights Reserved.
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

#include "mrl/error.hpp"
#include "mrl/tensor.hpp"
#include "mrl/ops.hpp"
#include "mrl/grad_check.hpp"
#include "mrl/layers.hpp"
#include "mrl/p4conv.hpp"
#include "mrl/attention.hpp"
#include "mrl/mrl_block.hpp"
#include "mrl/model.hpp"
#include "mrl/cost.hpp"
#include "mrl/data.hpp"
#include "mrl/optim.hpp"
#include "mrl/checkpoint.hpp"
#include "mrl/config.hpp"
#include "mrl/train.hpp"
#include "mrl/suites.hpp"
