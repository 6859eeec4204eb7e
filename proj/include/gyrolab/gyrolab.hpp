#pragma once

#include "errors.hpp"
#include "matcore.hpp"
#include "gyrator.hpp"
#include "simulate.hpp"
#include "circuit.hpp"
#include "fieldsolver.hpp"
#include "cli.hpp"
