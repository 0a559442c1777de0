#pragma once

#include "nerdi/autodiff/gradcheck.hpp"
#include "nerdi/autodiff/graph.hpp"
#include "nerdi/autodiff/ops.hpp"
#include "nerdi/autodiff/parallel.hpp"
#include "nerdi/autodiff/tensor.hpp"
