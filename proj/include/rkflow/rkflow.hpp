#pragma once

#include "rkflow/attention.hpp"
#include "rkflow/cli.hpp"
#include "rkflow/config.hpp"
#include "rkflow/ddta.hpp"
#include "rkflow/error.hpp"
#include "rkflow/latent.hpp"
#include "rkflow/metrics.hpp"
#include "rkflow/pipeline.hpp"
#include "rkflow/report.hpp"
#include "rkflow/rng.hpp"
#include "rkflow/solver.hpp"
#include "rkflow/tableau.hpp"
#include "rkflow/toy_mmdit.hpp"
#include "rkflow/velocity.hpp"
