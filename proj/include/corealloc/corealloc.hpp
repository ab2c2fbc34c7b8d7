#pragma once

#include "corealloc/correlation.hpp"
#include "corealloc/error.hpp"
#include "corealloc/fcn.hpp"
#include "corealloc/forest.hpp"
#include "corealloc/keyvalue.hpp"
#include "corealloc/ols.hpp"
#include "corealloc/pipeline.hpp"
#include "corealloc/random.hpp"
#include "corealloc/stats.hpp"
#include "corealloc/thermal_sim.hpp"
#include "corealloc/trace.hpp"
