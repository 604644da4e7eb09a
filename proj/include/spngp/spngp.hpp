#pragma once

// Umbrella header for the SPN-GP library: sum-product networks with exact
// Gaussian-process leaves, structure learning, hyperparameter optimization
// and the benchmark harness.

#include "spngp/baselines.hpp"
#include "spngp/common.hpp"
#include "spngp/config.hpp"
#include "spngp/data.hpp"
#include "spngp/gp.hpp"
#include "spngp/graph.hpp"
#include "spngp/hyperopt.hpp"
#include "spngp/kernel.hpp"
#include "spngp/model_io.hpp"
#include "spngp/pipeline.hpp"
#include "spngp/structure.hpp"
