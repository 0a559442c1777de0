#pragma once

#include "nerdi/toolkit/dataset.hpp"
#include "nerdi/toolkit/eval.hpp"
#include "nerdi/toolkit/image_io.hpp"
#include "nerdi/toolkit/metrics.hpp"
#include "nerdi/toolkit/oracle.hpp"
