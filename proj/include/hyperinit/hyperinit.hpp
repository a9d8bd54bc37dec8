#pragma once

#include "hyperinit/archgraph.hpp"
#include "hyperinit/checkpoint.hpp"
#include "hyperinit/dataset.hpp"
#include "hyperinit/downstream.hpp"
#include "hyperinit/hypernet.hpp"
#include "hyperinit/image.hpp"
#include "hyperinit/metrics.hpp"
#include "hyperinit/ops.hpp"
#include "hyperinit/rng.hpp"
#include "hyperinit/sampler.hpp"
#include "hyperinit/sched.hpp"
#include "hyperinit/ssl.hpp"
#include "hyperinit/tensor.hpp"
