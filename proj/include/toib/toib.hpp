#pragma once

#include "toib/channel.hpp"
#include "toib/club.hpp"
#include "toib/config.hpp"
#include "toib/data.hpp"
#include "toib/errors.hpp"
#include "toib/eval.hpp"
#include "toib/nn.hpp"
#include "toib/objectives.hpp"
#include "toib/rng.hpp"
#include "toib/serialize.hpp"
#include "toib/tensor.hpp"
#include "toib/training.hpp"
