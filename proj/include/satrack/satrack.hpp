#pragma once
// Umbrella header.

#include "satrack/ablation.hpp"
#include "satrack/backbone.hpp"
#include "satrack/checkpoint.hpp"
#include "satrack/config.hpp"
#include "satrack/data.hpp"
#include "satrack/gradcheck.hpp"
#include "satrack/gradcheck_suite.hpp"
#include "satrack/head.hpp"
#include "satrack/inspect.hpp"
#include "satrack/losses.hpp"
#include "satrack/model.hpp"
#include "satrack/nn.hpp"
#include "satrack/ops.hpp"
#include "satrack/rng.hpp"
#include "satrack/tensor.hpp"
#include "satrack/text.hpp"
#include "satrack/track.hpp"
#include "satrack/train.hpp"
