#pragma once

#include "gmix/channels.hpp"
#include "gmix/closed_forms.hpp"
#include "gmix/config.hpp"
#include "gmix/data_pipeline.hpp"
#include "gmix/erm.hpp"
#include "gmix/experiments.hpp"
#include "gmix/families.hpp"
#include "gmix/gaussian.hpp"
#include "gmix/model.hpp"
#include "gmix/replica.hpp"
