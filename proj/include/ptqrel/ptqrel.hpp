#pragma once

#include "ptqrel/archive.hpp"
#include "ptqrel/calib_set.hpp"
#include "ptqrel/calibrator.hpp"
#include "ptqrel/engine.hpp"
#include "ptqrel/error.hpp"
#include "ptqrel/format.hpp"
#include "ptqrel/harness.hpp"
#include "ptqrel/model.hpp"
#include "ptqrel/quantizer.hpp"
#include "ptqrel/reference.hpp"
#include "ptqrel/rng.hpp"
#include "ptqrel/tensor.hpp"
