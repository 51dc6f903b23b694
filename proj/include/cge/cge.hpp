#pragma once

#include "cge/error.hpp"
#include "cge/tensor.hpp"
#include "cge/params.hpp"
#include "cge/autodiff.hpp"
#include "cge/gradcheck.hpp"
#include "cge/graph.hpp"
#include "cge/sampler.hpp"
#include "cge/reweight.hpp"
#include "cge/model.hpp"
#include "cge/loss.hpp"
#include "cge/bilevel.hpp"
#include "cge/eval.hpp"
#include "cge/analysis.hpp"
#include "cge/io.hpp"
