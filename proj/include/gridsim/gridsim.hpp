#pragma once

#include "gridsim/accounting.hpp"
#include "gridsim/broker.hpp"
#include "gridsim/error.hpp"
#include "gridsim/grid_model.hpp"
#include "gridsim/metrics.hpp"
#include "gridsim/optimizer.hpp"
#include "gridsim/rng.hpp"
#include "gridsim/runner.hpp"
#include "gridsim/scenario.hpp"
#include "gridsim/sim_core.hpp"
#include "gridsim/simulation.hpp"
#include "gridsim/workload.hpp"
