#pragma once

#include "ila/intermediate/disturbance.hpp"
#include "ila/intermediate/ila_attack.hpp"
#include "ila/intermediate/losses.hpp"
