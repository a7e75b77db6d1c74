#pragma once

#include "lexcorpus/clients.hpp"
#include "lexcorpus/corpus.hpp"
#include "lexcorpus/dedup.hpp"
#include "lexcorpus/errors.hpp"
#include "lexcorpus/eval.hpp"
#include "lexcorpus/extract.hpp"
#include "lexcorpus/hash.hpp"
#include "lexcorpus/instruct.hpp"
#include "lexcorpus/manifest.hpp"
#include "lexcorpus/mix.hpp"
#include "lexcorpus/ngram_lm.hpp"
#include "lexcorpus/normalize.hpp"
#include "lexcorpus/pack.hpp"
#include "lexcorpus/parallel.hpp"
#include "lexcorpus/pipeline.hpp"
#include "lexcorpus/preference.hpp"
#include "lexcorpus/rules.hpp"
#include "lexcorpus/tokenizer.hpp"
#include "lexcorpus/utf8.hpp"
