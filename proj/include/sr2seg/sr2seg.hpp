#pragma once

#include "sr2seg/tensor.hpp"
#include "sr2seg/tape.hpp"
#include "sr2seg/ops.hpp"
#include "sr2seg/image.hpp"
#include "sr2seg/resample.hpp"
#include "sr2seg/raster_io.hpp"
#include "sr2seg/dataset.hpp"
#include "sr2seg/synth.hpp"
#include "sr2seg/dbpn.hpp"
#include "sr2seg/segnet.hpp"
#include "sr2seg/optim.hpp"
#include "sr2seg/checkpoint.hpp"
#include "sr2seg/metrics.hpp"
#include "sr2seg/config.hpp"
#include "sr2seg/trainer.hpp"
#include "sr2seg/report.hpp"
#include "sr2seg/cli.hpp"
