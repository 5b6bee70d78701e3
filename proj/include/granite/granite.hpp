// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "granite/core.hpp"
#include "granite/data.hpp"
#include "granite/layers.hpp"
#include "granite/model.hpp"
#include "granite/progressive.hpp"
#include "granite/report.hpp"
#include "granite/train.hpp"
#include "granite/walkforward.hpp"
