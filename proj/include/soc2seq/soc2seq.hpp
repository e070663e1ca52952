#pragma once

#include "soc2seq/checkpoint.hpp"
#include "soc2seq/config_file.hpp"
#include "soc2seq/corpus.hpp"
#include "soc2seq/decoding.hpp"
#include "soc2seq/embedding_table.hpp"
#include "soc2seq/error.hpp"
#include "soc2seq/evaluation.hpp"
#include "soc2seq/model.hpp"
#include "soc2seq/model_config.hpp"
#include "soc2seq/persona.hpp"
#include "soc2seq/socialgraph.hpp"
#include "soc2seq/synthetic.hpp"
#include "soc2seq/training.hpp"
#include "soc2seq/util.hpp"
