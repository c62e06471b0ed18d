#pragma once

// Umbrella header.

#include "fsel/adam.hpp"
#include "fsel/checkpoint.hpp"
#include "fsel/common.hpp"
#include "fsel/data.hpp"
#include "fsel/grad_check.hpp"
#include "fsel/gumbel.hpp"
#include "fsel/objective.hpp"
#include "fsel/ops.hpp"
#include "fsel/rng.hpp"
#include "fsel/selection.hpp"
#include "fsel/tensor.hpp"
#include "fsel/train.hpp"
#include "fsel/train_config.hpp"
#include "fsel/transformer.hpp"
