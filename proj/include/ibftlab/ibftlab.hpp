#pragma once

#include "byzantine.hpp"
#include "chain_types.hpp"
#include "messages.hpp"
#include "monitors.hpp"
#include "network_sim.hpp"
#include "protocol_variant.hpp"
#include "quorum_math.hpp"
#include "scenarios.hpp"
#include "schedule.hpp"
#include "validator.hpp"
