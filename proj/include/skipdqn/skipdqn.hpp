#pragma once

#include "skipdqn/agent.hpp"
#include "skipdqn/data.hpp"
#include "skipdqn/env.hpp"
#include "skipdqn/eval.hpp"
#include "skipdqn/experiments.hpp"
#include "skipdqn/explain.hpp"
#include "skipdqn/network.hpp"
#include "skipdqn/record.hpp"
#include "skipdqn/schema.hpp"
#include "skipdqn/util.hpp"
