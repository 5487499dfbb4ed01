#pragma once

#include "pdfilter/core.hpp"
#include "pdfilter/random.hpp"
#include "pdfilter/chain.hpp"
#include "pdfilter/filter.hpp"
#include "pdfilter/pdp.hpp"
#include "pdfilter/grid.hpp"
#include "pdfilter/stopping.hpp"
#include "pdfilter/experiments.hpp"
#include "pdfilter/io.hpp"

namespace pdfilter {
inline constexpr const char* kVersion = "0.1.0";
}
