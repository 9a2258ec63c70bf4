#pragma once

#include "lowrank/core.hpp"
#include "lowrank/random.hpp"
#include "lowrank/cones.hpp"
#include "lowrank/objective.hpp"
#include "lowrank/op_counter.hpp"
#include "lowrank/problems.hpp"
#include "lowrank/maps.hpp"
#include "lowrank/detailed.hpp"
#include "lowrank/io.hpp"
#include "lowrank/driver.hpp"
