#pragma once

#include "ate/allocation.hpp"
#include "ate/analysis.hpp"
#include "ate/comparator.hpp"
#include "ate/continuous.hpp"
#include "ate/posterior.hpp"
#include "ate/quadrature.hpp"
#include "ate/random.hpp"
#include "ate/randomization.hpp"
#include "ate/special_functions.hpp"
#include "ate/trial.hpp"
#include "ate/types.hpp"
