#pragma once

#include "rltir/errors.hpp"
#include "rltir/welford.hpp"
#include "rltir/stream_forest.hpp"
#include "rltir/metrics.hpp"
#include "rltir/feedback_gate.hpp"
#include "rltir/update_actions.hpp"
#include "rltir/qnetwork.hpp"
#include "rltir/dqn_policy.hpp"
#include "rltir/data_ingest.hpp"
#include "rltir/pipeline.hpp"
#include "rltir/serialization.hpp"
#include "rltir/experiment.hpp"
