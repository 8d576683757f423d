#pragma once

#include "gpdnn/attacks.hpp"
#include "gpdnn/checkpoint.hpp"
#include "gpdnn/conv.hpp"
#include "gpdnn/csv.hpp"
#include "gpdnn/datasets.hpp"
#include "gpdnn/error.hpp"
#include "gpdnn/experiments.hpp"
#include "gpdnn/gp.hpp"
#include "gpdnn/graph.hpp"
#include "gpdnn/linalg.hpp"
#include "gpdnn/metrics.hpp"
#include "gpdnn/model.hpp"
#include "gpdnn/nn.hpp"
#include "gpdnn/ops.hpp"
#include "gpdnn/protocol.hpp"
#include "gpdnn/random.hpp"
#include "gpdnn/robustmax.hpp"
#include "gpdnn/tensor.hpp"
#include "gpdnn/training.hpp"
