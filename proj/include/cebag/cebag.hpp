#pragma once

// Umbrella header for the cebag toolkit.

#include "cebag/collector.hpp"
#include "cebag/errors.hpp"
#include "cebag/fp.hpp"
#include "cebag/metrics.hpp"
#include "cebag/report.hpp"
#include "cebag/scoring.hpp"
#include "cebag/synthetic.hpp"
#include "cebag/trace.hpp"
#include "cebag/trace_io.hpp"
