#pragma once

#include "pacopp/baselines.hpp"
#include "pacopp/behavior.hpp"
#include "pacopp/bench.hpp"
#include "pacopp/calibrate.hpp"
#include "pacopp/core.hpp"
#include "pacopp/io.hpp"
#include "pacopp/quantile.hpp"
#include "pacopp/rejection.hpp"
#include "pacopp/rng.hpp"
#include "pacopp/stats.hpp"
#include "pacopp/synthenv.hpp"
