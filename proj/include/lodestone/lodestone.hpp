// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header for the lodestone prompt-retrieval library.
#pragma once

#include "lodestone/config.hpp"
#include "lodestone/encoder.hpp"
#include "lodestone/errors.hpp"
#include "lodestone/evalharness.hpp"
#include "lodestone/index.hpp"
#include "lodestone/io.hpp"
#include "lodestone/labeling.hpp"
#include "lodestone/lmclient.hpp"
#include "lodestone/mock_lm.hpp"
#include "lodestone/parallel.hpp"
#include "lodestone/pipeline.hpp"
#include "lodestone/remote_lm.hpp"
#include "lodestone/rng.hpp"
#include "lodestone/scoring.hpp"
#include "lodestone/synthetic.hpp"
#include "lodestone/taskdata.hpp"
#include "lodestone/text.hpp"
#include "lodestone/training.hpp"
