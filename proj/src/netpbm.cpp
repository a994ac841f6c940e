#include "eadnet/netpbm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace eadnet {

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) continue;
    tok.push_back(static_cast<char>(ch));
    while ((ch = is.peek()) != EOF && !std::isspace(ch) && ch != '#')
      tok.push_back(static_cast<char>(is.get()));
    return tok;
  }
  fail_io("'", path, "': truncated netpbm header");
}

int header_int(std::istream& is, const std::string& path, const char* what) {
  const std::string tok = next_token(is, path);
  try {
    const int v = std::stoi(tok);
    if (v < 1) fail_io("'", path, "': non-positive ", what);
    return v;
  } catch (const std::invalid_argument&) {
    fail_io("'", path, "': malformed ", what, " '", tok, "'");
  } catch (const std::out_of_range&) {
    fail_io("'", path, "': malformed ", what, " '", tok, "'");
  }
}

std::vector<std::uint8_t> read_body(const std::string& path, const std::string& magic,
                                    int channels, int* out_w, int* out_h) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail_io("cannot open '", path, "'");
  const std::string found = next_token(f, path);
  if (found != magic) fail_io("'", path, "': expected ", magic, " file, found '", found, "'");
  const int w = header_int(f, path, "width");
  const int h = header_int(f, path, "height");
  const int maxval = header_int(f, path, "maxval");
  if (maxval != 255) fail_io("'", path, "': only maxval 255 is supported, got ", maxval);
  // exactly one whitespace byte separates the header from the payload
  const int sep = f.get();
  if (sep == EOF || !std::isspace(sep)) fail_io("'", path, "': missing header separator");
  std::vector<std::uint8_t> body(static_cast<std::size_t>(w) * h * channels);
  if (!f.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body.size())))
    fail_io("'", path, "': truncated pixel payload");
  *out_w = w;
  *out_h = h;
  return body;
}

void write_body(const std::string& path, const std::string& magic, int w, int h,
                const std::vector<std::uint8_t>& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail_io("cannot open '", path, "' for writing");
  f << magic << "\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!f) fail_io("failed writing '", path, "'");
}

std::uint8_t to_byte(float v) {
  const float clamped = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

}  // namespace

Tensor load_ppm(const std::string& path) {
  int w = 0, h = 0;
  const auto body = read_body(path, "P6", 3, &w, &h);
  Tensor img(Dims4{1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t o = (static_cast<std::size_t>(y) * w + x) * 3;
      for (int c = 0; c < 3; ++c)
        img.at(0, c, y, x) = static_cast<float>(body[o + static_cast<std::size_t>(c)]) / 255.0f;
    }
  }
  return img;
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.dims.n != 1 || image.dims.c != 3)
    fail_invalid("write_ppm: image must be (1,3,h,w), got ", image.dims.str());
  const int h = image.dims.h, w = image.dims.w;
  std::vector<std::uint8_t> body(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        body[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)] =
            to_byte(image.at(0, c, y, x));
  write_body(path, "P6", w, h, body);
}

LabelMap load_pgm_labels(const std::string& path) {
  int w = 0, h = 0;
  const auto body = read_body(path, "P5", 1, &w, &h);
  LabelMap labels(1, h, w);
  labels.data = body;
  return labels;
}

void write_pgm_labels(const std::string& path, const LabelMap& labels) {
  if (labels.n != 1) fail_invalid("write_pgm_labels: expected a single label map");
  write_body(path, "P5", labels.w, labels.h, labels.data);
}

Palette default_palette(int num_classes) {
  if (num_classes < 1) fail_invalid("palette: need at least one class");
  Palette p;
  p.colors.resize(static_cast<std::size_t>(num_classes));
  p.colors[0] = {64, 64, 64};  // background
  for (int k = 1; k < num_classes; ++k) {
    // evenly spaced hues, full saturation
    const double hue = 360.0 * (k - 1) / std::max(1, num_classes - 1);
    const double c = 0.72, m = 0.18;
    const double hp = hue / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    p.colors[static_cast<std::size_t>(k)] = {static_cast<std::uint8_t>(std::lround((r + m) * 255)),
                                             static_cast<std::uint8_t>(std::lround((g + m) * 255)),
                                             static_cast<std::uint8_t>(std::lround((b + m) * 255))};
  }
  return p;
}

Palette load_palette(const std::string& path, int num_classes) {
  std::ifstream f(path);
  if (!f) fail_io("cannot open '", path, "'");
  Palette p;
  p.colors.assign(static_cast<std::size_t>(num_classes), {0, 0, 0});
  std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream ls(line);
    int idx, r, g, b;
    if (!(ls >> idx)) continue;  // blank line
    if (!(ls >> r >> g >> b)) fail_io("'", path, "': line ", lineno, ": expected index r g b");
    if (idx < 0 || idx >= num_classes)
      fail_io("'", path, "': line ", lineno, ": class ", idx, " out of range");
    if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255)
      fail_io("'", path, "': line ", lineno, ": channel outside [0, 255]");
    p.colors[static_cast<std::size_t>(idx)] = {static_cast<std::uint8_t>(r),
                                               static_cast<std::uint8_t>(g),
                                               static_cast<std::uint8_t>(b)};
    seen[static_cast<std::size_t>(idx)] = true;
  }
  for (int k = 0; k < num_classes; ++k)
    if (!seen[static_cast<std::size_t>(k)]) fail_io("'", path, "': missing class ", k);
  return p;
}

void save_palette(const Palette& palette, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail_io("cannot open '", path, "' for writing");
  for (std::size_t k = 0; k < palette.colors.size(); ++k)
    f << k << ' ' << int(palette.colors[k][0]) << ' ' << int(palette.colors[k][1]) << ' '
      << int(palette.colors[k][2]) << '\n';
  if (!f) fail_io("failed writing '", path, "'");
}

void write_label_ppm(const std::string& path, const LabelMap& labels, const Palette& palette) {
  if (labels.n != 1) fail_invalid("write_label_ppm: expected a single label map");
  std::vector<std::uint8_t> body(static_cast<std::size_t>(labels.w) * labels.h * 3);
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const int label = labels.data[i];
    std::array<std::uint8_t, 3> rgb{0, 0, 0};  // ignore renders black
    if (label != kIgnoreLabel) {
      if (label >= static_cast<int>(palette.colors.size()))
        fail_invalid("write_label_ppm: label ", label, " has no palette entry");
      rgb = palette.colors[static_cast<std::size_t>(label)];
    }
    body[i * 3] = rgb[0];
    body[i * 3 + 1] = rgb[1];
    body[i * 3 + 2] = rgb[2];
  }
  write_body(path, "P6", labels.w, labels.h, body);
}

}  // namespace eadnet
