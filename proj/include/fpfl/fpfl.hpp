#pragma once

// Umbrella header for the fair-and-private federated learning simulator.

#include "fpfl/accountant.hpp"
#include "fpfl/common.hpp"
#include "fpfl/config.hpp"
#include "fpfl/data.hpp"
#include "fpfl/distill.hpp"
#include "fpfl/dp.hpp"
#include "fpfl/federation.hpp"
#include "fpfl/losses.hpp"
#include "fpfl/nn.hpp"
#include "fpfl/report.hpp"
#include "fpfl/runner.hpp"
