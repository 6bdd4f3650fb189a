#pragma once

#include "krica/dataio.hpp"
#include "krica/error.hpp"
#include "krica/kernel.hpp"
#include "krica/numeric.hpp"
#include "krica/objective.hpp"
#include "krica/pipeline.hpp"
#include "krica/solver.hpp"
#include "krica/whitening.hpp"
