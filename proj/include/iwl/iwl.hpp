#pragma once

// Everything except the command-line layer (iwl/cli/*).

#include "iwl/calculus.hpp"
#include "iwl/fields.hpp"
#include "iwl/measures.hpp"
#include "iwl/parallel.hpp"
#include "iwl/paths.hpp"
#include "iwl/random.hpp"
#include "iwl/smooth.hpp"
#include "iwl/stats.hpp"
#include "iwl/verifier/assembly.hpp"
#include "iwl/verifier/flow_engine.hpp"
#include "iwl/verifier/flows.hpp"
#include "iwl/verifier/pathwise.hpp"
#include "iwl/verifier/report.hpp"
