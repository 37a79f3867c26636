#pragma once

#include "fedreact/aggregation.hpp"
#include "fedreact/baselines.hpp"
#include "fedreact/datagen.hpp"
#include "fedreact/encoder.hpp"
#include "fedreact/evocluster.hpp"
#include "fedreact/metrics.hpp"
#include "fedreact/numerics.hpp"
#include "fedreact/orchestrator.hpp"
#include "fedreact/parallel.hpp"
#include "fedreact/taskmodel.hpp"
