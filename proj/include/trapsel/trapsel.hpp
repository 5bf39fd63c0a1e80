#pragma once

#include "trapsel/attack.hpp"
#include "trapsel/cluster.hpp"
#include "trapsel/common.hpp"
#include "trapsel/corpus.hpp"
#include "trapsel/features.hpp"
#include "trapsel/harness.hpp"
#include "trapsel/monitor.hpp"
#include "trapsel/traps.hpp"
