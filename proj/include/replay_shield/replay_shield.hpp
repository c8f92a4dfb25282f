#pragma once

// Everything except the socket transport (live.hpp), which pulls in cpp-httplib.

#include "replay_shield/analyzer.hpp"
#include "replay_shield/cache_control.hpp"
#include "replay_shield/config.hpp"
#include "replay_shield/errors.hpp"
#include "replay_shield/experiment.hpp"
#include "replay_shield/http.hpp"
#include "replay_shield/http_cache.hpp"
#include "replay_shield/memento.hpp"
#include "replay_shield/proxy.hpp"
#include "replay_shield/scenarios.hpp"
#include "replay_shield/throttle.hpp"
#include "replay_shield/upstream.hpp"
#include "replay_shield/workload.hpp"
