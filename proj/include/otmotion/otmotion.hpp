#ifndef OTMOTION_OTMOTION_HPP
#define OTMOTION_OTMOTION_HPP

#include "errors.hpp"
#include "evaluation.hpp"
#include "experiments.hpp"
#include "factorization.hpp"
#include "io.hpp"
#include "mp_reduce.hpp"
#include "ot_core.hpp"
#include "simulators.hpp"
#include "types.hpp"

#endif
