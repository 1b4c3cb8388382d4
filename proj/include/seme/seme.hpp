#pragma once

#include "seme/alignment.hpp"
#include "seme/archive_io.hpp"
#include "seme/decomposition.hpp"
#include "seme/merge.hpp"
#include "seme/model_bundle.hpp"
#include "seme/semantic_basis.hpp"
#include "seme/transform.hpp"
#include "seme/version.hpp"
