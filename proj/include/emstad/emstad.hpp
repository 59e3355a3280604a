#pragma once

// Umbrella header.

#include "emstad/errors.hpp"
#include "emstad/hermitian.hpp"
#include "emstad/rng.hpp"
#include "emstad/scene.hpp"
#include "emstad/em.hpp"
#include "emstad/detect.hpp"
#include "emstad/metrics.hpp"
#include "emstad/parallel.hpp"
#include "emstad/serialize.hpp"
#include "emstad/config.hpp"
#include "emstad/harness.hpp"
#include "emstad/version.hpp"
