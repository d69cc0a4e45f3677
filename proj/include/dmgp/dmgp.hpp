#pragma once

#include "model.hpp"
#include "covariance.hpp"
#include "priors.hpp"
#include "objective.hpp"
#include "inference.hpp"
#include "prediction.hpp"
#include "tuning.hpp"
#include "baselines.hpp"
#include "experiments.hpp"
#include "rl.hpp"
#include "io.hpp"
