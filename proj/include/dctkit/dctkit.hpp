#pragma once

#include "attention.hpp"
#include "bench.hpp"
#include "checkpoint.hpp"
#include "clustering.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "gradcheck.hpp"
#include "io.hpp"
#include "layers.hpp"
#include "matrix.hpp"
#include "network.hpp"
#include "params.hpp"
#include "point_cloud.hpp"
#include "sampling.hpp"
#include "tape.hpp"
#include "training.hpp"
