#pragma once

#include "magschro/core.hpp"
#include "magschro/evolve.hpp"
#include "magschro/lab.hpp"
#include "magschro/linalg.hpp"
#include "magschro/magop.hpp"
#include "magschro/mesh.hpp"
#include "magschro/multiplier.hpp"
#include "magschro/obsgram.hpp"
#include "magschro/spectra.hpp"
#include "magschro/weights.hpp"
