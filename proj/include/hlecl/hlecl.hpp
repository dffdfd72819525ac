#pragma once

// Umbrella header for the online hierarchical continual-learning library.
#include "hlecl/dataset.hpp"
#include "hlecl/error.hpp"
#include "hlecl/experiment.hpp"
#include "hlecl/memory.hpp"
#include "hlecl/model.hpp"
#include "hlecl/random.hpp"
#include "hlecl/sampler.hpp"
#include "hlecl/stream.hpp"
#include "hlecl/taxonomy.hpp"
#include "hlecl/trainer.hpp"
