#pragma once

#include "simcal/calibration.hpp"
#include "simcal/dataset.hpp"
#include "simcal/ks.hpp"
#include "simcal/lasso.hpp"
#include "simcal/model.hpp"
#include "simcal/pvalue.hpp"
#include "simcal/rng.hpp"
#include "simcal/selection.hpp"
#include "simcal/simstudy.hpp"
