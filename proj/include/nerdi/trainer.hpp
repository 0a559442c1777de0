#pragma once

#include "nerdi/trainer/adam.hpp"
#include "nerdi/trainer/checkpoint.hpp"
#include "nerdi/trainer/config.hpp"
#include "nerdi/trainer/synthesize.hpp"
#include "nerdi/trainer/view.hpp"
