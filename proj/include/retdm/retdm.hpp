#pragma once

#include "retdm/error.hpp"
#include "retdm/tensor.hpp"
#include "retdm/optim.hpp"
#include "retdm/gradcheck.hpp"
#include "retdm/dataset.hpp"
#include "retdm/label_index.hpp"
#include "retdm/networks.hpp"
#include "retdm/losses.hpp"
#include "retdm/metrics.hpp"
#include "retdm/trainer.hpp"
#include "retdm/config.hpp"
#include "retdm/verify.hpp"
#include "retdm/log.hpp"
#include "retdm/cli.hpp"
