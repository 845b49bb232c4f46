#pragma once

#include "qtlab/grid.hpp"
#include "qtlab/qtensor.hpp"
#include "qtlab/symbols.hpp"
#include "qtlab/semigroup.hpp"
#include "qtlab/timestepper.hpp"
#include "qtlab/io.hpp"
#include "qtlab/experiments.hpp"
