#pragma once

#include "biser/common.hpp"
#include "biser/data.hpp"
#include "biser/eval.hpp"
#include "biser/log.hpp"
#include "biser/models.hpp"
#include "biser/optim.hpp"
#include "biser/propensity.hpp"
#include "biser/synth.hpp"
#include "biser/training.hpp"
