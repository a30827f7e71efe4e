#pragma once

#include "bmsdep/bms_chain.hpp"
#include "bmsdep/config.hpp"
#include "bmsdep/error.hpp"
#include "bmsdep/estimate.hpp"
#include "bmsdep/integrate.hpp"
#include "bmsdep/moments.hpp"
#include "bmsdep/portfolio.hpp"
#include "bmsdep/random_effects.hpp"
#include "bmsdep/relativity.hpp"
#include "bmsdep/rng.hpp"
#include "bmsdep/simulate.hpp"
#include "bmsdep/text.hpp"
