// Umbrella header.

#pragma once

#include "oculus/benchmark.hpp"
#include "oculus/chat.hpp"
#include "oculus/common.hpp"
#include "oculus/config.hpp"
#include "oculus/embedding.hpp"
#include "oculus/events.hpp"
#include "oculus/gateway.hpp"
#include "oculus/metrics.hpp"
#include "oculus/orchestrator.hpp"
#include "oculus/prompts.hpp"
#include "oculus/questions.hpp"
#include "oculus/replay.hpp"
#include "oculus/retrieval.hpp"
#include "oculus/robustness.hpp"
#include "oculus/tools.hpp"
#include "oculus/trace.hpp"
