#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "eadnet/tensor.hpp"

namespace eadnet {

// Binary netpbm I/O, maxval 255 only. Images scale to [0,1]; label bytes
// are taken verbatim (255 = ignore).
Tensor load_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);

LabelMap load_pgm_labels(const std::string& path);
void write_pgm_labels(const std::string& path, const LabelMap& labels);

struct Palette {
  std::vector<std::array<std::uint8_t, 3>> colors;  // one RGB triple per class
};

Palette default_palette(int num_classes);
// Text palette file, one line per class: "<class-index> <r> <g> <b>".
Palette load_palette(const std::string& path, int num_classes);
void save_palette(const Palette& palette, const std::string& path);

void write_label_ppm(const std::string& path, const LabelMap& labels, const Palette& palette);

}  // namespace eadnet
