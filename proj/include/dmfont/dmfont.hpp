#pragma once

#include "dmfont/autograd.hpp"
#include "dmfont/blocks.hpp"
#include "dmfont/checkpoint.hpp"
#include "dmfont/common.hpp"
#include "dmfont/config.hpp"
#include "dmfont/data.hpp"
#include "dmfont/eval.hpp"
#include "dmfont/losses.hpp"
#include "dmfont/memory.hpp"
#include "dmfont/metrics.hpp"
#include "dmfont/model.hpp"
#include "dmfont/nn.hpp"
#include "dmfont/optim.hpp"
#include "dmfont/png_io.hpp"
#include "dmfont/rng.hpp"
#include "dmfont/scripts.hpp"
#include "dmfont/spectral_norm.hpp"
#include "dmfont/tensor.hpp"
#include "dmfont/train.hpp"
