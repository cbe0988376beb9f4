#pragma once

#include "craf.hpp"
#include "error.hpp"
#include "io.hpp"
#include "labels.hpp"
#include "learning.hpp"
#include "pipeline.hpp"
#include "propagation.hpp"
#include "raster.hpp"
