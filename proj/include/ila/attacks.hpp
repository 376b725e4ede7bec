#pragma once

#include "ila/attacks/attacks.hpp"
#include "ila/attacks/batch.hpp"
#include "ila/attacks/budget.hpp"
