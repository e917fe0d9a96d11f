#pragma once

#include "spiketime/analysis.hpp"
#include "spiketime/calibration.hpp"
#include "spiketime/circuit.hpp"
#include "spiketime/dataset.hpp"
#include "spiketime/encoder.hpp"
#include "spiketime/errors.hpp"
#include "spiketime/io.hpp"
#include "spiketime/signal.hpp"
