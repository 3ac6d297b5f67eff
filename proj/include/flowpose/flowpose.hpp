#pragma once

#include "flowpose/checkpoint.hpp"
#include "flowpose/config.hpp"
#include "flowpose/dataset.hpp"
#include "flowpose/eval.hpp"
#include "flowpose/flow.hpp"
#include "flowpose/heatmap.hpp"
#include "flowpose/network.hpp"
#include "flowpose/ops.hpp"
#include "flowpose/pipeline.hpp"
#include "flowpose/synth.hpp"
#include "flowpose/tape.hpp"
#include "flowpose/temporal.hpp"
#include "flowpose/tensor.hpp"
#include "flowpose/train.hpp"
