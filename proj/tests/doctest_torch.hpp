#pragma once

// torch pulls in a glog-style CHECK macro; doctest's takes precedence in tests.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
