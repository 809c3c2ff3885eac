#pragma once

#include "skelcon/error.hpp"
#include "skelcon/rng.hpp"
#include "skelcon/skeleton.hpp"
#include "skelcon/augment.hpp"
#include "skelcon/represent.hpp"
#include "skelcon/checkpoint.hpp"
#include "skelcon/encoders.hpp"
#include "skelcon/contrast.hpp"
#include "skelcon/downstream.hpp"
#include "skelcon/config.hpp"
