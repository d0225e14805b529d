// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "csifb/adam.hpp"
#include "csifb/bitstream.hpp"
#include "csifb/channel.hpp"
#include "csifb/checkpoint.hpp"
#include "csifb/codec.hpp"
#include "csifb/csibin.hpp"
#include "csifb/errors.hpp"
#include "csifb/finetune.hpp"
#include "csifb/harness.hpp"
#include "csifb/kernels.hpp"
#include "csifb/latent.hpp"
#include "csifb/losses.hpp"
#include "csifb/plot.hpp"
#include "csifb/prior.hpp"
#include "csifb/range_coder.hpp"
#include "csifb/rng.hpp"
#include "csifb/tape.hpp"
#include "csifb/tensor.hpp"
#include "csifb/update.hpp"
