// Umbrella header.
#pragma once

#include "alignformer/dam.hpp"
#include "alignformer/dataset.hpp"
#include "alignformer/features.hpp"
#include "alignformer/flow.hpp"
#include "alignformer/gam.hpp"
#include "alignformer/geometry.hpp"
#include "alignformer/image.hpp"
#include "alignformer/io.hpp"
#include "alignformer/losses.hpp"
#include "alignformer/metrics.hpp"
#include "alignformer/pipeline.hpp"
#include "alignformer/ppmunet.hpp"
#include "alignformer/registration.hpp"
