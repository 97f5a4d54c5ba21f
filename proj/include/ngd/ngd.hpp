#pragma once

#include "archive.hpp"
#include "descent.hpp"
#include "errors.hpp"
#include "experiments.hpp"
#include "function_space.hpp"
#include "model_linear.hpp"
#include "model_shallow_nn.hpp"
#include "projectors.hpp"
#include "random.hpp"
#include "sampling.hpp"
#include "verification.hpp"
