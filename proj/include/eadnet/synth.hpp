#pragma once

#include <vector>

#include "eadnet/tensor.hpp"

namespace eadnet {

struct LabeledSample {
  Tensor image;     // (1, 3, h, w) in [0, 1]
  LabelMap labels;  // (1, h, w)
};

// Deterministic images of colored geometric shapes (axis-aligned
// rectangles, ellipses, rotated elongated bars) on a textured background,
// with exact label maps. Foreground class k gets one shape per image;
// shape kind and color family are fixed per class. Class 0 is background.
std::vector<LabeledSample> synth_dataset(unsigned seed, int count, int size, int num_classes);

}  // namespace eadnet
