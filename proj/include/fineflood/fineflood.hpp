#pragma once

#include "fineflood/checkpoint.hpp"
#include "fineflood/common.hpp"
#include "fineflood/config.hpp"
#include "fineflood/experiment.hpp"
#include "fineflood/finetune.hpp"
#include "fineflood/ingest.hpp"
#include "fineflood/metrics.hpp"
#include "fineflood/model.hpp"
#include "fineflood/report.hpp"
#include "fineflood/sweep.hpp"
#include "fineflood/synth.hpp"
#include "fineflood/tpe.hpp"
#include "fineflood/train.hpp"
