#pragma once

// Convenience umbrella: pulls in the whole library.

#include "negminer/analysis.hpp"
#include "negminer/common.hpp"
#include "negminer/corpus.hpp"
#include "negminer/dataset_io.hpp"
#include "negminer/embed_client.hpp"
#include "negminer/ensemble.hpp"
#include "negminer/matrix.hpp"
#include "negminer/mining.hpp"
#include "negminer/run_config.hpp"
#include "negminer/sweep.hpp"
#include "negminer/topk.hpp"
