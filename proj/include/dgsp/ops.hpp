#pragma once

#include "dgsp/ops_basic.hpp"
#include "dgsp/ops_conv.hpp"
#include "dgsp/ops_linalg.hpp"
