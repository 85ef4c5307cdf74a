#pragma once

#include "contrans/error.hpp"
#include "contrans/tensor_file.hpp"
#include "contrans/model_config.hpp"
#include "contrans/model_weights.hpp"
#include "contrans/unicode.hpp"
#include "contrans/tokenizer.hpp"
#include "contrans/steering.hpp"
#include "contrans/transformer.hpp"
#include "contrans/synthetic.hpp"
#include "contrans/concept.hpp"
#include "contrans/least_squares.hpp"
#include "contrans/linear_map.hpp"
#include "contrans/artifact_io.hpp"
#include "contrans/classifier.hpp"
#include "contrans/eval.hpp"
#include "contrans/analysis.hpp"
#include "contrans/cli.hpp"
