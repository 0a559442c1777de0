#pragma once

#include "nerdi/render/camera.hpp"
#include "nerdi/render/resize.hpp"
#include "nerdi/render/volume.hpp"
