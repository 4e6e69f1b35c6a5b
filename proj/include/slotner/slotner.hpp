#pragma once

#include "slotner/adam.hpp"
#include "slotner/checkpoint.hpp"
#include "slotner/config.hpp"
#include "slotner/corpus.hpp"
#include "slotner/crf.hpp"
#include "slotner/embeddings.hpp"
#include "slotner/errors.hpp"
#include "slotner/grid.hpp"
#include "slotner/labels.hpp"
#include "slotner/recurrent.hpp"
#include "slotner/rng.hpp"
#include "slotner/tagger.hpp"
#include "slotner/tensor.hpp"
#include "slotner/train.hpp"
