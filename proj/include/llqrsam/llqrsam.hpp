#pragma once

#include "llqrsam/analysis.hpp"
#include "llqrsam/errors.hpp"
#include "llqrsam/landscapes.hpp"
#include "llqrsam/metric.hpp"
#include "llqrsam/numkit.hpp"
#include "llqrsam/optimizers.hpp"
#include "llqrsam/random.hpp"
#include "llqrsam/stochsim.hpp"

#include "llqrsam/harness/checks.hpp"
#include "llqrsam/harness/config.hpp"
#include "llqrsam/harness/experiments.hpp"
#include "llqrsam/harness/io.hpp"
#include "llqrsam/harness/studies.hpp"
