#pragma once

// Umbrella header.

#include "autograd.hpp"
#include "config.hpp"
#include "error.hpp"
#include "image.hpp"
#include "loader.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "networks.hpp"
#include "nn_ops.hpp"
#include "phantom.hpp"
#include "png.hpp"
#include "preprocess.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
#include "volume_io.hpp"
