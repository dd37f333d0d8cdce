// Copyright 2026 The U-FEFP Authors. All Rights Reserved.
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

#pragma once

#include "ufefp/augment.hpp"
#include "ufefp/autodiff.hpp"
#include "ufefp/byol.hpp"
#include "ufefp/config.hpp"
#include "ufefp/container.hpp"
#include "ufefp/dataset.hpp"
#include "ufefp/decoder.hpp"
#include "ufefp/embeddings.hpp"
#include "ufefp/encoder.hpp"
#include "ufefp/error.hpp"
#include "ufefp/eval.hpp"
#include "ufefp/ntu.hpp"
#include "ufefp/runtime.hpp"
#include "ufefp/skeleton.hpp"
#include "ufefp/synthetic.hpp"
#include "ufefp/train.hpp"
