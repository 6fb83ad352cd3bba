#pragma once

// Umbrella header for the whole toolkit.

#include "dualdis/autograd.hpp"
#include "dualdis/data.hpp"
#include "dualdis/edit.hpp"
#include "dualdis/evaluate.hpp"
#include "dualdis/gradcheck.hpp"
#include "dualdis/image_io.hpp"
#include "dualdis/keyvalue.hpp"
#include "dualdis/labels.hpp"
#include "dualdis/layer_spec.hpp"
#include "dualdis/layers.hpp"
#include "dualdis/model.hpp"
#include "dualdis/objectives.hpp"
#include "dualdis/ops.hpp"
#include "dualdis/optim.hpp"
#include "dualdis/persist.hpp"
#include "dualdis/service.hpp"
#include "dualdis/synthetic.hpp"
#include "dualdis/tensor.hpp"
#include "dualdis/trainer.hpp"
