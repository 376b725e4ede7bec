#pragma once

#include "ila/engine/blas.hpp"
#include "ila/engine/gradcheck.hpp"
#include "ila/engine/ops.hpp"
#include "ila/engine/ops_nn.hpp"
#include "ila/engine/optim.hpp"
#include "ila/engine/tape.hpp"
#include "ila/engine/tensor.hpp"
