#pragma once

// Umbrella header.

#include "kafforge/cli.hpp"
#include "kafforge/config.hpp"
#include "kafforge/data.hpp"
#include "kafforge/errors.hpp"
#include "kafforge/gradcheck.hpp"
#include "kafforge/kaf.hpp"
#include "kafforge/kernels.hpp"
#include "kafforge/layers.hpp"
#include "kafforge/linalg.hpp"
#include "kafforge/network.hpp"
#include "kafforge/tensor.hpp"
#include "kafforge/train.hpp"
