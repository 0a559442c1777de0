#pragma once

#include "nerdi/objective/losses.hpp"
#include "nerdi/objective/step.hpp"
