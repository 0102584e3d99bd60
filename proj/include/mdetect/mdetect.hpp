#pragma once

#include "mdetect/cli.hpp"
#include "mdetect/config.hpp"
#include "mdetect/dataset_io.hpp"
#include "mdetect/digest.hpp"
#include "mdetect/encoder.hpp"
#include "mdetect/error.hpp"
#include "mdetect/evaluator.hpp"
#include "mdetect/nn/checkpoint.hpp"
#include "mdetect/nn/graph.hpp"
#include "mdetect/nn/inference.hpp"
#include "mdetect/nn/model_zoo.hpp"
#include "mdetect/nn/network.hpp"
#include "mdetect/process_id.hpp"
#include "mdetect/report.hpp"
#include "mdetect/rng.hpp"
#include "mdetect/schema.hpp"
#include "mdetect/testbed.hpp"
#include "mdetect/trace_io.hpp"
#include "mdetect/trainer.hpp"
