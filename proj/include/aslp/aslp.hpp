#pragma once

#include "aslp/adaptive.hpp"
#include "aslp/binary_io.hpp"
#include "aslp/checkpoint.hpp"
#include "aslp/errors.hpp"
#include "aslp/files.hpp"
#include "aslp/grid.hpp"
#include "aslp/loss.hpp"
#include "aslp/mapfile.hpp"
#include "aslp/metrics.hpp"
#include "aslp/model.hpp"
#include "aslp/parallel.hpp"
#include "aslp/perturb.hpp"
#include "aslp/random.hpp"
#include "aslp/synthdata.hpp"
#include "aslp/trainer.hpp"
