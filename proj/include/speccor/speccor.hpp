#pragma once

#include "speccor/correction.hpp"
#include "speccor/dsp.hpp"
#include "speccor/features.hpp"
#include "speccor/fir.hpp"
#include "speccor/io.hpp"
#include "speccor/parallel.hpp"
#include "speccor/sim.hpp"
