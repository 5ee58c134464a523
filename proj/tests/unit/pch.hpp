#pragma once

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "audit/classify.hpp"
#include "audit/evaluate.hpp"
#include "audit/corpus.hpp"
#include "audit/grid.hpp"
#include "audit/llm_gateway.hpp"
#include "audit/resolve.hpp"
