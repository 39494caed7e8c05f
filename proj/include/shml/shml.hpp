#pragma once
// Umbrella header. http_provider.hpp is left out: include it where a real
// endpoint is needed.

#include "shml/adaptation.hpp"
#include "shml/backtest.hpp"
#include "shml/data.hpp"
#include "shml/datagen.hpp"
#include "shml/diagnosis.hpp"
#include "shml/error.hpp"
#include "shml/experiment.hpp"
#include "shml/format.hpp"
#include "shml/llm.hpp"
#include "shml/models.hpp"
#include "shml/monitoring.hpp"
#include "shml/orchestrator.hpp"
#include "shml/plot.hpp"
#include "shml/prompt_templates.hpp"
#include "shml/rng.hpp"
