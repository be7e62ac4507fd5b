#pragma once

#include "cfmimo/random.hpp"
#include "cfmimo/scenario.hpp"
#include "cfmimo/scenario_io.hpp"
#include "cfmimo/model.hpp"
#include "cfmimo/objectives.hpp"
#include "cfmimo/feasible_set.hpp"
#include "cfmimo/solver.hpp"
#include "cfmimo/experiment.hpp"
