#pragma once

// Umbrella header.

#include "irismatch/binary_io.hpp"
#include "irismatch/checkpoint.hpp"
#include "irismatch/config.hpp"
#include "irismatch/dataset.hpp"
#include "irismatch/evaluation.hpp"
#include "irismatch/image.hpp"
#include "irismatch/image_io.hpp"
#include "irismatch/iriscode.hpp"
#include "irismatch/matcher.hpp"
#include "irismatch/normalization.hpp"
#include "irismatch/ops.hpp"
#include "irismatch/random.hpp"
#include "irismatch/synthetic.hpp"
#include "irismatch/tensor.hpp"
#include "irismatch/training.hpp"
#include "irismatch/unit_circle.hpp"
