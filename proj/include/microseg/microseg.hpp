#pragma once

#include "microseg/activity.hpp"
#include "microseg/tensor.hpp"
#include "microseg/ops.hpp"
#include "microseg/model.hpp"
#include "microseg/masking.hpp"
#include "microseg/metrics.hpp"
#include "microseg/synth.hpp"
#include "microseg/velocity.hpp"
#include "microseg/train.hpp"
#include "microseg/io.hpp"
#include "microseg/experiment.hpp"
