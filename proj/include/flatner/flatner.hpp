#pragma once

// Single include for the whole library.

#include "flatner/adam.hpp"
#include "flatner/array.hpp"
#include "flatner/autograd.hpp"
#include "flatner/checkpoint.hpp"
#include "flatner/common.hpp"
#include "flatner/crf.hpp"
#include "flatner/data.hpp"
#include "flatner/ebd.hpp"
#include "flatner/eval.hpp"
#include "flatner/gradcheck.hpp"
#include "flatner/lattice.hpp"
#include "flatner/model.hpp"
#include "flatner/params.hpp"
#include "flatner/posenc.hpp"
#include "flatner/tags.hpp"
#include "flatner/trainer.hpp"
#include "flatner/vocab.hpp"
