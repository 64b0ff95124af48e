#pragma once

#include "vibi/adam.hpp"
#include "vibi/checkpoint.hpp"
#include "vibi/chunker.hpp"
#include "vibi/data.hpp"
#include "vibi/errors.hpp"
#include "vibi/eval.hpp"
#include "vibi/explain.hpp"
#include "vibi/grad_check.hpp"
#include "vibi/graph.hpp"
#include "vibi/nets.hpp"
#include "vibi/objective.hpp"
#include "vibi/ops.hpp"
#include "vibi/presets.hpp"
#include "vibi/record_io.hpp"
#include "vibi/rng.hpp"
#include "vibi/run_config.hpp"
#include "vibi/sampler.hpp"
#include "vibi/tensor.hpp"
#include "vibi/trainer.hpp"
