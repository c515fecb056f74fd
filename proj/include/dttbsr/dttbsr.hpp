#pragma once

#include "dttbsr/audio_io.hpp"
#include "dttbsr/augment.hpp"
#include "dttbsr/checkpoint.hpp"
#include "dttbsr/config.hpp"
#include "dttbsr/dataset.hpp"
#include "dttbsr/discriminator.hpp"
#include "dttbsr/errors.hpp"
#include "dttbsr/fft.hpp"
#include "dttbsr/generator.hpp"
#include "dttbsr/inference.hpp"
#include "dttbsr/losses.hpp"
#include "dttbsr/metrics.hpp"
#include "dttbsr/nn.hpp"
#include "dttbsr/optim.hpp"
#include "dttbsr/spectral.hpp"
#include "dttbsr/tensor.hpp"
#include "dttbsr/toy_data.hpp"
#include "dttbsr/training.hpp"
