#pragma once

#include "amfm/analytic.hpp"
#include "amfm/blocks.hpp"
#include "amfm/dca.hpp"
#include "amfm/error.hpp"
#include "amfm/eval.hpp"
#include "amfm/fft.hpp"
#include "amfm/filterbank.hpp"
#include "amfm/image.hpp"
#include "amfm/image_io.hpp"
#include "amfm/nn.hpp"
#include "amfm/parallel.hpp"
#include "amfm/reproduce.hpp"
#include "amfm/rng.hpp"
#include "amfm/synth.hpp"
#include "amfm/tensor_io.hpp"
#include "amfm/train.hpp"
