#pragma once

#include "core.hpp"
#include "csv.hpp"
#include "simplex.hpp"
#include "solvers.hpp"
#include "regressor.hpp"
#include "nuisance.hpp"
#include "estimators.hpp"
#include "inference.hpp"
#include "simulation.hpp"
#include "serialize.hpp"
