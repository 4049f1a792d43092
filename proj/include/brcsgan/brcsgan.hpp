#pragma once

// Umbrella header for the library.

#include "brcsgan/bleu.hpp"
#include "brcsgan/checkpoint.hpp"
#include "brcsgan/config.hpp"
#include "brcsgan/corpus.hpp"
#include "brcsgan/discriminator.hpp"
#include "brcsgan/generator.hpp"
#include "brcsgan/param_store.hpp"
#include "brcsgan/policy.hpp"
#include "brcsgan/reward.hpp"
#include "brcsgan/rng.hpp"
#include "brcsgan/runner.hpp"
#include "brcsgan/tape.hpp"
#include "brcsgan/tensor.hpp"
#include "brcsgan/trainer.hpp"
#include "brcsgan/vocab.hpp"
