#pragma once

#include "pdemix/scalar_field.hpp"
#include "pdemix/reaction.hpp"
#include "pdemix/pde.hpp"
#include "pdemix/dopri5.hpp"
#include "pdemix/integrate.hpp"
#include "pdemix/sample.hpp"
#include "pdemix/variational.hpp"
#include "pdemix/parallel.hpp"
#include "pdemix/datagen.hpp"
#include "pdemix/dataset_io.hpp"
#include "pdemix/engine.hpp"
#include "pdemix/config.hpp"
