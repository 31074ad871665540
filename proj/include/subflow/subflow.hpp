#pragma once

// Umbrella header for the subflow toolkit.

#include "subflow/cnn.hpp"
#include "subflow/config.hpp"
#include "subflow/errors.hpp"
#include "subflow/evaluate.hpp"
#include "subflow/fvm.hpp"
#include "subflow/geostats.hpp"
#include "subflow/grid.hpp"
#include "subflow/io.hpp"
#include "subflow/linear.hpp"
#include "subflow/optimizer.hpp"
#include "subflow/parallel.hpp"
#include "subflow/rng.hpp"
#include "subflow/single_phase.hpp"
#include "subflow/surrogate.hpp"
#include "subflow/training.hpp"
#include "subflow/two_phase.hpp"
#include "subflow/version.hpp"
