#pragma once

#include "trapsel/cluster/affinity_propagation.hpp"
#include "trapsel/cluster/gmm.hpp"
#include "trapsel/cluster/mean_shift.hpp"
#include "trapsel/cluster/optics.hpp"
#include "trapsel/cluster/result.hpp"
