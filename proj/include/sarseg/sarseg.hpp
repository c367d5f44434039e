#ifndef SARSEG_SARSEG_HPP
#define SARSEG_SARSEG_HPP

// Everything except io.hpp, which needs the vendored JSON header.

#include "sarseg/beta_estimation.hpp"
#include "sarseg/energy.hpp"
#include "sarseg/errors.hpp"
#include "sarseg/gamma_model.hpp"
#include "sarseg/graphcut.hpp"
#include "sarseg/grid.hpp"
#include "sarseg/lbp.hpp"
#include "sarseg/maxflow.hpp"
#include "sarseg/pipelines.hpp"
#include "sarseg/rng.hpp"
#include "sarseg/simulation.hpp"
#include "sarseg/special.hpp"

#endif  // SARSEG_SARSEG_HPP
