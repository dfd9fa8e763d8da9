#pragma once

#include "lorafed/adapter.hpp"
#include "lorafed/checkpoint.hpp"
#include "lorafed/config.hpp"
#include "lorafed/data.hpp"
#include "lorafed/error.hpp"
#include "lorafed/experiment.hpp"
#include "lorafed/federation.hpp"
#include "lorafed/ledger.hpp"
#include "lorafed/manifest.hpp"
#include "lorafed/optimizer.hpp"
#include "lorafed/random.hpp"
#include "lorafed/split.hpp"
#include "lorafed/sweep.hpp"
#include "lorafed/tensor.hpp"
#include "lorafed/toy_model.hpp"
