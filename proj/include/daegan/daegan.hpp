#pragma once

#include "daegan/checkpoint.hpp"
#include "daegan/cli.hpp"
#include "daegan/common.hpp"
#include "daegan/config.hpp"
#include "daegan/conv.hpp"
#include "daegan/embedders.hpp"
#include "daegan/eval.hpp"
#include "daegan/gan.hpp"
#include "daegan/gradcheck.hpp"
#include "daegan/gradcheck_suite.hpp"
#include "daegan/image_io.hpp"
#include "daegan/layers.hpp"
#include "daegan/ops.hpp"
#include "daegan/optim.hpp"
#include "daegan/synthdata.hpp"
#include "daegan/tensor.hpp"
#include "daegan/training.hpp"
#include "daegan/warp.hpp"
