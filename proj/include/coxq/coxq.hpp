#pragma once

#include "coxq/analytic.hpp"
#include "coxq/env.hpp"
#include "coxq/errors.hpp"
#include "coxq/harness.hpp"
#include "coxq/json.hpp"
#include "coxq/ldp.hpp"
#include "coxq/matrix.hpp"
#include "coxq/parallel.hpp"
#include "coxq/quadrature.hpp"
#include "coxq/random.hpp"
#include "coxq/sim.hpp"
#include "coxq/stats.hpp"
