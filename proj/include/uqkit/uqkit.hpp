#pragma once

#include "uqkit/autodiff.hpp"
#include "uqkit/classification.hpp"
#include "uqkit/conformal.hpp"
#include "uqkit/datasets.hpp"
#include "uqkit/error.hpp"
#include "uqkit/laplace.hpp"
#include "uqkit/losses.hpp"
#include "uqkit/metrics.hpp"
#include "uqkit/nn.hpp"
#include "uqkit/parallel.hpp"
#include "uqkit/predictions.hpp"
#include "uqkit/regression.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/special.hpp"
#include "uqkit/swag.hpp"
#include "uqkit/tensor.hpp"
#include "uqkit/train.hpp"
#include "uqkit/vi.hpp"
