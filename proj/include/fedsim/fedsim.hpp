#pragma once

#include "fedsim/blob.hpp"
#include "fedsim/config.hpp"
#include "fedsim/data.hpp"
#include "fedsim/error.hpp"
#include "fedsim/features.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/harness.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"
