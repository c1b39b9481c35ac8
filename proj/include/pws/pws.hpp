#pragma once

#include "pws/baseline.hpp"
#include "pws/dataset.hpp"
#include "pws/error.hpp"
#include "pws/extraction.hpp"
#include "pws/forest.hpp"
#include "pws/lf_registry.hpp"
#include "pws/metrics.hpp"
#include "pws/pipeline.hpp"
#include "pws/prompts.hpp"
#include "pws/refine.hpp"
#include "pws/util.hpp"
#include "pws/vlm_gateway.hpp"
