#pragma once

#include "patc/error.hpp"
#include "patc/netmodel.hpp"
#include "patc/powerflow.hpp"
#include "patc/atc.hpp"
#include "patc/distributions.hpp"
#include "patc/nataf.hpp"
#include "patc/lhs.hpp"
#include "patc/polybasis.hpp"
#include "patc/lra.hpp"
#include "patc/scenario.hpp"
#include "patc/pipeline.hpp"
