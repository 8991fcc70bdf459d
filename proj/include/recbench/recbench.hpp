#pragma once

// Umbrella header: the whole library in one include.

#include "recbench/autodiff.hpp"
#include "recbench/bench.hpp"
#include "recbench/csv.hpp"
#include "recbench/errors.hpp"
#include "recbench/graph.hpp"
#include "recbench/ingest.hpp"
#include "recbench/matrix.hpp"
#include "recbench/metrics.hpp"
#include "recbench/models/models.hpp"
#include "recbench/nn.hpp"
#include "recbench/preprocess.hpp"
#include "recbench/rng.hpp"
#include "recbench/types.hpp"
