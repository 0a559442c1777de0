#pragma once

#include "nerdi/prior/denoiser.hpp"
#include "nerdi/prior/inversion.hpp"
#include "nerdi/prior/remote.hpp"
#include "nerdi/prior/schedule.hpp"
#include "nerdi/prior/toy.hpp"
