#pragma once

#include "ila/harness/analysis.hpp"
#include "ila/harness/batch_io.hpp"
#include "ila/harness/hash.hpp"
#include "ila/harness/manifest.hpp"
#include "ila/harness/protocol.hpp"
#include "ila/harness/report.hpp"
#include "ila/harness/training.hpp"
