#pragma once

#include "tokdyn/dataset.hpp"
#include "tokdyn/error.hpp"
#include "tokdyn/experiment.hpp"
#include "tokdyn/fft.hpp"
#include "tokdyn/lattice_ops.hpp"
#include "tokdyn/learners.hpp"
#include "tokdyn/log.hpp"
#include "tokdyn/observability.hpp"
#include "tokdyn/parallel.hpp"
#include "tokdyn/random_fields.hpp"
#include "tokdyn/rng.hpp"
#include "tokdyn/rollout_metrics.hpp"
#include "tokdyn/solvers.hpp"
#include "tokdyn/tokenizer.hpp"
#include "tokdyn/types.hpp"
