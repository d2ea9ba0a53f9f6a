#pragma once

#include "eptomo/bayes.hpp"
#include "eptomo/diagnostics.hpp"
#include "eptomo/entangle.hpp"
#include "eptomo/errors.hpp"
#include "eptomo/events.hpp"
#include "eptomo/mle.hpp"
#include "eptomo/polopt.hpp"
#include "eptomo/posterior.hpp"
#include "eptomo/qmat.hpp"
#include "eptomo/simkit.hpp"
