#pragma once

// Doubly robust estimation of instrument-conditional treatment effects:
// data ingestion, weighted quasi-likelihood nuisances, point estimators,
// stacked-moment sandwich inference, estimator comparisons, and the
// Monte Carlo harness.

#include "ipwra/config.hpp"
#include "ipwra/data.hpp"
#include "ipwra/driver.hpp"
#include "ipwra/errors.hpp"
#include "ipwra/estimators.hpp"
#include "ipwra/hausman.hpp"
#include "ipwra/inference.hpp"
#include "ipwra/math.hpp"
#include "ipwra/parallel.hpp"
#include "ipwra/propensity.hpp"
#include "ipwra/qmle.hpp"
#include "ipwra/rng.hpp"
#include "ipwra/simulate.hpp"
#include "ipwra/table.hpp"
