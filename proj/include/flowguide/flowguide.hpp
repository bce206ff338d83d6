#pragma once

#include "flowguide/common.hpp"
#include "flowguide/evalagg.hpp"
#include "flowguide/flow.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/io.hpp"
#include "flowguide/partition.hpp"
#include "flowguide/slat.hpp"
#include "flowguide/toyflows.hpp"
#include "flowguide/toyshapes.hpp"
