// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fp4/block_quant.hpp"
#include "fp4/codecs.hpp"
#include "fp4/config.hpp"
#include "fp4/counter_rng.hpp"
#include "fp4/errors.hpp"
#include "fp4/harness.hpp"
#include "fp4/matrix.hpp"
#include "fp4/metrics.hpp"
#include "fp4/qgemm.hpp"
#include "fp4/qlinear.hpp"
#include "fp4/report.hpp"
#include "fp4/rht.hpp"
#include "fp4/tensor_file.hpp"
