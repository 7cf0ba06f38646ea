#ifndef RFEDIT_RFEDIT_HPP
#define RFEDIT_RFEDIT_HPP

// Everything, for tools and tests that want the whole library.
#include "rfedit/baselines.hpp"
#include "rfedit/config.hpp"
#include "rfedit/core_math.hpp"
#include "rfedit/dna.hpp"
#include "rfedit/errors.hpp"
#include "rfedit/experiments.hpp"
#include "rfedit/flow.hpp"
#include "rfedit/metrics.hpp"
#include "rfedit/mvg.hpp"
#include "rfedit/plot.hpp"
#include "rfedit/selftest.hpp"
#include "rfedit/velocity.hpp"

#endif  // RFEDIT_RFEDIT_HPP
