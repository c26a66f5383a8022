#pragma once

// Pseudo-gradient training with tunable sensitivity to hard examples:
// a generalization of the softmax cross-entropy gradient, parameterized by
// k > 0 (k = 1 recovers cross-entropy exactly), plus the training loops,
// selection protocol and numerical checks built around it.

#include "pgrad/data.hpp"
#include "pgrad/errors.hpp"
#include "pgrad/experiment.hpp"
#include "pgrad/network.hpp"
#include "pgrad/optim.hpp"
#include "pgrad/pseudograd.hpp"
#include "pgrad/report.hpp"
#include "pgrad/rng.hpp"
#include "pgrad/verify.hpp"
