#pragma once

#include "fplnet/analysis.hpp"
#include "fplnet/autograd.hpp"
#include "fplnet/blocks.hpp"
#include "fplnet/checkpoint.hpp"
#include "fplnet/config.hpp"
#include "fplnet/conv.hpp"
#include "fplnet/data.hpp"
#include "fplnet/error.hpp"
#include "fplnet/gradcheck.hpp"
#include "fplnet/loss.hpp"
#include "fplnet/metrics.hpp"
#include "fplnet/network.hpp"
#include "fplnet/ops.hpp"
#include "fplnet/optim.hpp"
#include "fplnet/parameters.hpp"
#include "fplnet/tensor.hpp"
#include "fplnet/train.hpp"
