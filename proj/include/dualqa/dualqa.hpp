#ifndef DUALQA_DUALQA_HPP
#define DUALQA_DUALQA_HPP

#include "dualqa/assess.hpp"
#include "dualqa/attacks.hpp"
#include "dualqa/base64.hpp"
#include "dualqa/dataset.hpp"
#include "dualqa/errors.hpp"
#include "dualqa/external_predictor.hpp"
#include "dualqa/image.hpp"
#include "dualqa/optim.hpp"
#include "dualqa/png.hpp"
#include "dualqa/predictor.hpp"
#include "dualqa/report_io.hpp"
#include "dualqa/rng.hpp"
#include "dualqa/train.hpp"

#endif  // DUALQA_DUALQA_HPP
