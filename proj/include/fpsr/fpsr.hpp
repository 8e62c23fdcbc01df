// Umbrella header: the whole library.
#pragma once

#include "fpsr/admm.hpp"
#include "fpsr/diagnostics.hpp"
#include "fpsr/error.hpp"
#include "fpsr/eval.hpp"
#include "fpsr/model.hpp"
#include "fpsr/parallel.hpp"
#include "fpsr/partitioner.hpp"
#include "fpsr/sparse_core.hpp"
#include "fpsr/spectral.hpp"
#include "fpsr/training.hpp"
