#pragma once

// Umbrella header for the reward-transfer library.

#include "data_sim.hpp"
#include "diagnostics.hpp"
#include "envgen.hpp"
#include "estimators.hpp"
#include "harness.hpp"
#include "linops.hpp"
#include "rng.hpp"
#include "soft_control.hpp"
#include "tables.hpp"
#include "transfer.hpp"
