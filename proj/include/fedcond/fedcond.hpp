#pragma once

#include "fedcond/batch.hpp"
#include "fedcond/client.hpp"
#include "fedcond/config.hpp"
#include "fedcond/csv.hpp"
#include "fedcond/drift.hpp"
#include "fedcond/errors.hpp"
#include "fedcond/experiments.hpp"
#include "fedcond/latency.hpp"
#include "fedcond/metrics.hpp"
#include "fedcond/model.hpp"
#include "fedcond/records.hpp"
#include "fedcond/report.hpp"
#include "fedcond/rng.hpp"
#include "fedcond/server.hpp"
#include "fedcond/simulation.hpp"
#include "fedcond/streams.hpp"
