#pragma once

#include "nerdi/field/field.hpp"
#include "nerdi/field/hash_grid.hpp"
