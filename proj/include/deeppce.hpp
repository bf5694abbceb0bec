#pragma once

#include "deeppce/error.hpp"
#include "deeppce/orthopoly.hpp"
#include "deeppce/basis.hpp"
#include "deeppce/condition.hpp"
#include "deeppce/rng.hpp"
#include "deeppce/sobol_indices.hpp"
#include "deeppce/shallow_pce.hpp"
#include "deeppce/circuit.hpp"
#include "deeppce/dataset.hpp"
#include "deeppce/training.hpp"
#include "deeppce/inference.hpp"
#include "deeppce/mc_oracle.hpp"
#include "deeppce/serialization.hpp"
#include "deeppce/circuit_io.hpp"
#include "deeppce/bench_data.hpp"
