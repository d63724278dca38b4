#pragma once

// Umbrella header.

#include "pole/adapters.hpp"
#include "pole/cam_core.hpp"
#include "pole/class_selector.hpp"
#include "pole/clip_bridge.hpp"
#include "pole/errors.hpp"
#include "pole/image_io.hpp"
#include "pole/objective.hpp"
#include "pole/prompt_space.hpp"
#include "pole/pseudo_labels.hpp"
#include "pole/random.hpp"
#include "pole/tensor.hpp"
#include "pole/pipeline/checkpoint.hpp"
#include "pole/pipeline/config.hpp"
#include "pole/pipeline/dataset.hpp"
#include "pole/pipeline/eval.hpp"
#include "pole/pipeline/model.hpp"
#include "pole/pipeline/report.hpp"
#include "pole/pipeline/train.hpp"
