#pragma once

#include "gdsr/tensor.hpp"
#include "gdsr/linop.hpp"
#include "gdsr/schedule.hpp"
#include "gdsr/denoiser.hpp"
#include "gdsr/metrics.hpp"
#include "gdsr/guidance.hpp"
#include "gdsr/cascade.hpp"
#include "gdsr/problems.hpp"
#include "gdsr/io.hpp"
#include "gdsr/config.hpp"
#include "gdsr/experiment.hpp"
