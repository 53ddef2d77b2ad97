#pragma once

// Umbrella header for the personalized-RAG training pipeline.

#include "prlm/corpus.hpp"
#include "prlm/errors.hpp"
#include "prlm/grpo.hpp"
#include "prlm/metrics.hpp"
#include "prlm/policy.hpp"
#include "prlm/prm.hpp"
#include "prlm/report.hpp"
#include "prlm/retrieval.hpp"
#include "prlm/reward.hpp"
#include "prlm/rng.hpp"
#include "prlm/textproc.hpp"
