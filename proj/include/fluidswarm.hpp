#pragma once

#include "fluidswarm/csv.hpp"
#include "fluidswarm/errors.hpp"
#include "fluidswarm/metrics.hpp"
#include "fluidswarm/parallel.hpp"
#include "fluidswarm/partition.hpp"
#include "fluidswarm/pipeline.hpp"
#include "fluidswarm/plant_suite.hpp"
#include "fluidswarm/primitives.hpp"
#include "fluidswarm/reference_field.hpp"
#include "fluidswarm/run_io.hpp"
#include "fluidswarm/swarm_sim.hpp"
#include "fluidswarm/vec3.hpp"
#include "fluidswarm/velocity_fit.hpp"
#include "fluidswarm/velocity_plant.hpp"
#include "fluidswarm/version.hpp"
