#pragma once

// Umbrella header for the recourse library: synthesis of minimum-cost
// action sequences that flip a classifier's decision.

#include "recourse/actions.hpp"
#include "recourse/autodiff.hpp"
#include "recourse/cli.hpp"
#include "recourse/common.hpp"
#include "recourse/cwopt.hpp"
#include "recourse/expr.hpp"
#include "recourse/io.hpp"
#include "recourse/model.hpp"
#include "recourse/robustness.hpp"
#include "recourse/schema.hpp"
#include "recourse/search.hpp"
