#pragma once

#include "mulcfsc/tensor.hpp"
#include "mulcfsc/ops.hpp"
#include "mulcfsc/grad_check.hpp"
#include "mulcfsc/complex.hpp"
#include "mulcfsc/channel.hpp"
#include "mulcfsc/codec.hpp"
#include "mulcfsc/cmrg.hpp"
#include "mulcfsc/sic.hpp"
#include "mulcfsc/schemes.hpp"
#include "mulcfsc/losses.hpp"
#include "mulcfsc/training.hpp"
#include "mulcfsc/metrics.hpp"
#include "mulcfsc/harness/config.hpp"
#include "mulcfsc/harness/csv.hpp"
#include "mulcfsc/harness/dataset.hpp"
#include "mulcfsc/harness/evaluate.hpp"
#include "mulcfsc/harness/experiment.hpp"
#include "mulcfsc/harness/image_io.hpp"
