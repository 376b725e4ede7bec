#pragma once

#include "ila/data/cifar.hpp"
#include "ila/data/dataset.hpp"
#include "ila/data/synthetic.hpp"
