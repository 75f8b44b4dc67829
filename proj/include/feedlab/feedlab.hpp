#pragma once

#include "feedlab/allocator.hpp"
#include "feedlab/core_model.hpp"
#include "feedlab/error.hpp"
#include "feedlab/estimation.hpp"
#include "feedlab/io.hpp"
#include "feedlab/rng.hpp"
#include "feedlab/simulator.hpp"
#include "feedlab/snapshot.hpp"
#include "feedlab/types.hpp"
