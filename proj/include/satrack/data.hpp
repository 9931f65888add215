#pragma once
// Synthetic vision-language sequences, dataset directory I/O and
// template/search cropping.
//
// Dataset layout (one folder per sequence):
//   <root>/<name>/imgs/00000001.ppm ...   frames, sorted by file name
//   <root>/<name>/groundtruth.txt         "x,y,w,h" per frame (pixels)
//   <root>/<name>/language.txt            one description (optional)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "satrack/head.hpp"
#include "satrack/rng.hpp"
#include "satrack/text.hpp"

namespace satrack {

namespace fs = std::filesystem;

/// 8-bit interleaved RGB image.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

inline void write_ppm(const Image& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write image '" + path.string() + "'");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

/// Reads binary (P6) or ASCII (P3) PPM with maxval 255.
inline Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open image '" + path.string() + "'");
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return t;
    }
    throw ConfigError("truncated PPM header in '" + path.string() + "'");
  };
  const std::string magic = token();
  if (magic != "P6" && magic != "P3") throw ConfigError("'" + path.string() + "' is not a PPM (P6/P3) image");
  const std::size_t w = std::stoul(token()), h = std::stoul(token()), maxval = std::stoul(token());
  if (maxval != 255 || w == 0 || h == 0) throw ConfigError("unsupported PPM geometry/maxval in '" + path.string() + "'");
  Image img(w, h);
  if (magic == "P6") {
    in.get();
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) throw ConfigError("truncated PPM data in '" + path.string() + "'");
  } else {
    for (auto& v : img.rgb) v = static_cast<std::uint8_t>(std::stoul(token()));
  }
  return img;
}

/// 8-bit grayscale PGM of values in [lo, hi] (values outside are clamped).
inline void write_pgm(const std::vector<double>& values, std::size_t width, std::size_t height, const fs::path& path,
                      double lo, double hi) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < width * height; ++i) {
    const double t = std::clamp((values[i] - lo) / span, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(t * 255.0))));
  }
}

/// Tracking sequence with per-frame boxes in pixel coordinates (x_tl, y_tl, x_br, y_br).
struct Sequence {
  std::string name;
  std::vector<Image> frames;
  std::vector<BBox> boxes;
  std::string description;
  std::map<std::string, std::string> attributes;
};

// ----------------------------------------------------------------- generator

struct Color {
  std::string name;
  std::array<double, 3> rgb;
};

inline const std::vector<Color>& palette() {
  static const std::vector<Color> p{{"red", {0.90, 0.12, 0.12}},    {"green", {0.12, 0.78, 0.20}},
                                    {"blue", {0.15, 0.30, 0.95}},   {"yellow", {0.95, 0.88, 0.10}},
                                    {"cyan", {0.10, 0.85, 0.90}},   {"magenta", {0.88, 0.15, 0.85}},
                                    {"orange", {1.00, 0.55, 0.05}}, {"white", {0.97, 0.97, 0.97}}};
  return p;
}

inline const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> s{"circle", "square", "triangle"};
  return s;
}

inline const std::vector<std::string>& direction_names() {
  static const std::vector<std::string> d{"left", "right", "up", "down"};
  return d;
}

/// Every word the generator can put in a description.
inline std::vector<std::string> lexicon_words() {
  std::vector<std::string> w{"the", "moving"};
  for (const auto& c : palette()) w.push_back(c.name);
  for (const auto& s : shape_names()) w.push_back(s);
  for (const auto& d : direction_names()) w.push_back(d);
  return w;
}

struct GeneratorSpec {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t length = 32;
  std::size_t distractor_count = 0;
  /// Target attributes; chosen at random when unset.
  std::optional<std::string> color;
  std::optional<std::string> shape;
  /// Explicit distractor colors/shapes (shape defaults to the target's); random
  /// colors different from the target when empty.
  std::vector<std::string> distractor_colors;
  std::vector<std::string> distractor_shapes;
  bool occluders = false;
  double min_half_size = 4.0;
  double max_half_size = 7.0;
  double speed = 1.2;  // pixels per frame
};

/// Geometry of one rendered object in one frame.
struct ObjectPose {
  double cx, cy, half;
};

/// Fractional coverage of pixel (x, y) by the shape, from 4x4 supersampling.
inline double shape_coverage(const std::string& shape, const ObjectPose& p, std::size_t x, std::size_t y) {
  constexpr int kSub = 4;
  int inside = 0;
  for (int sy = 0; sy < kSub; ++sy)
    for (int sx = 0; sx < kSub; ++sx) {
      const double px = static_cast<double>(x) + (sx + 0.5) / kSub - p.cx;
      const double py = static_cast<double>(y) + (sy + 0.5) / kSub - p.cy;
      bool in = false;
      if (shape == "circle") {
        in = px * px + py * py <= p.half * p.half;
      } else if (shape == "square") {
        in = std::abs(px) <= p.half && std::abs(py) <= p.half;
      } else {  // triangle: apex (0, -h), base (+-h, +h)
        in = py >= -p.half && py <= p.half && std::abs(px) <= 0.5 * (py + p.half);
      }
      inside += in;
    }
  return inside / static_cast<double>(kSub * kSub);
}

/// Tight box of a shape's analytic geometry: all three shapes span
/// [cx - half, cx + half] x [cy - half, cy + half].
inline BBox shape_bounds(const ObjectPose& p) { return {p.cx - p.half, p.cy - p.half, p.cx + p.half, p.cy + p.half}; }

namespace detail {

inline const Color& find_color(const std::string& name) {
  for (const auto& c : palette())
    if (c.name == name) return c;
  throw ConfigError("unknown color '" + name + "'");
}

inline void check_shape(const std::string& name) {
  if (std::find(shape_names().begin(), shape_names().end(), name) == shape_names().end())
    throw ConfigError("unknown shape '" + name + "'");
}

/// Smooth random walk of object poses, reflected at the frame border.
inline std::vector<ObjectPose> random_walk(Rng& rng, const GeneratorSpec& spec, double half) {
  const double lo_x = half + 1, hi_x = static_cast<double>(spec.width) - half - 1;
  const double lo_y = half + 1, hi_y = static_cast<double>(spec.height) - half - 1;
  double x = rng.uniform(lo_x, hi_x), y = rng.uniform(lo_y, hi_y);
  const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = spec.speed * std::cos(heading), dy = spec.speed * std::sin(heading);
  double vx = dx, vy = dy;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double period = rng.uniform(12.0, 30.0);
  std::vector<ObjectPose> poses;
  for (std::size_t t = 0; t < spec.length; ++t) {
    const double h = half * (1.0 + 0.15 * std::sin(phase + 2.0 * std::numbers::pi * static_cast<double>(t) / period));
    poses.push_back({x, y, h});
    vx = 0.8 * vx + 0.2 * dx + 0.35 * rng.normal();
    vy = 0.8 * vy + 0.2 * dy + 0.35 * rng.normal();
    x += vx;
    y += vy;
    if (x < lo_x) x = 2 * lo_x - x, vx = std::abs(vx);
    if (x > hi_x) x = 2 * hi_x - x, vx = -std::abs(vx);
    if (y < lo_y) y = 2 * lo_y - y, vy = std::abs(vy);
    if (y > hi_y) y = 2 * hi_y - y, vy = -std::abs(vy);
  }
  return poses;
}

}  // namespace detail

/// Renders a synthetic sequence: textured background, distractors sharing the
/// target's shape in other colors, the target on top, optional occluding bars.
/// Fully determined by (seed, id, spec).
inline Sequence generate_sequence(std::uint64_t seed, std::size_t id, const GeneratorSpec& spec) {
  if (spec.width < 16 || spec.height < 16 || spec.length == 0) throw ConfigError("generator: frames too small or empty");
  if (!(spec.min_half_size > 0 && spec.max_half_size >= spec.min_half_size)) throw ConfigError("generator: bad size range");
  Rng rng = Rng(seed).split("sequence/" + std::to_string(id));

  const std::string color = spec.color ? *spec.color : palette()[rng.index(palette().size())].name;
  const std::string shape = spec.shape ? *spec.shape : shape_names()[rng.index(shape_names().size())];
  const Color& target_color = detail::find_color(color);
  detail::check_shape(shape);

  struct Object {
    std::string shape;
    Color color;
    std::vector<ObjectPose> poses;
  };
  std::vector<Object> distractors;
  for (std::size_t k = 0; k < spec.distractor_count; ++k) {
    std::string dshape = k < spec.distractor_shapes.size() ? spec.distractor_shapes[k] : shape;
    detail::check_shape(dshape);
    std::string dcolor;
    if (k < spec.distractor_colors.size()) {
      dcolor = spec.distractor_colors[k];
    } else {
      do {
        dcolor = palette()[rng.index(palette().size())].name;
      } while (dcolor == color);
    }
    if (dcolor == color && dshape == shape) {
      throw ConfigError("generator: distractor " + std::to_string(k) + " is identical to the target (" + color + " " +
                        shape + "); no description can disambiguate it");
    }
    distractors.push_back({dshape, detail::find_color(dcolor), {}});
  }

  const double half = rng.uniform(spec.min_half_size, spec.max_half_size);
  const auto target = detail::random_walk(rng, spec, half);
  for (auto& d : distractors) d.poses = detail::random_walk(rng, spec, rng.uniform(spec.min_half_size, spec.max_half_size));

  // Background: coarse value noise (8x8 lattice, bilinear) with a random tint.
  const std::size_t W = spec.width, H = spec.height;
  std::array<double, 3> tint{rng.uniform(0.35, 0.55), rng.uniform(0.35, 0.55), rng.uniform(0.35, 0.55)};
  std::vector<double> lattice(9 * 9);
  for (auto& v : lattice) v = rng.uniform(-0.12, 0.12);
  std::vector<double> background(W * H * 3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double gx = 8.0 * static_cast<double>(x) / static_cast<double>(W);
      const double gy = 8.0 * static_cast<double>(y) / static_cast<double>(H);
      const auto ix = static_cast<std::size_t>(gx), iy = static_cast<std::size_t>(gy);
      const double fx = gx - static_cast<double>(ix), fy = gy - static_cast<double>(iy);
      const double n = (1 - fx) * (1 - fy) * lattice[iy * 9 + ix] + fx * (1 - fy) * lattice[iy * 9 + ix + 1] +
                       (1 - fx) * fy * lattice[(iy + 1) * 9 + ix] + fx * fy * lattice[(iy + 1) * 9 + ix + 1];
      for (std::size_t c = 0; c < 3; ++c) background[(y * W + x) * 3 + c] = tint[c] + n;
    }

  struct Bar {
    double x0, x1, y0, y1;
  };
  std::vector<Bar> bars;
  if (spec.occluders) {
    const std::size_t nbars = 1 + rng.index(2);
    for (std::size_t k = 0; k < nbars; ++k) {
      const double pos = rng.uniform(0.2, 0.8), thick = rng.uniform(2.0, 4.0);
      if (rng.uniform() < 0.5) bars.push_back({pos * W - thick, pos * W + thick, 0, static_cast<double>(H)});
      else bars.push_back({0, static_cast<double>(W), pos * H - thick, pos * H + thick});
    }
  }

  Sequence seq;
  seq.name = "seq_" + std::to_string(id);
  Rng noise = rng.split("pixel-noise");
  for (std::size_t t = 0; t < spec.length; ++t) {
    std::vector<double> px = background;
    auto paint = [&](const std::string& shp, const Color& col, const ObjectPose& pose) {
      const BBox b = shape_bounds(pose);
      const std::size_t x0 = static_cast<std::size_t>(std::max(0.0, std::floor(b.x_tl)));
      const std::size_t y0 = static_cast<std::size_t>(std::max(0.0, std::floor(b.y_tl)));
      const std::size_t x1 = std::min<std::size_t>(W - 1, static_cast<std::size_t>(std::max(0.0, std::ceil(b.x_br))));
      const std::size_t y1 = std::min<std::size_t>(H - 1, static_cast<std::size_t>(std::max(0.0, std::ceil(b.y_br))));
      for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x) {
          const double cov = shape_coverage(shp, pose, x, y);
          if (cov <= 0) continue;
          for (std::size_t c = 0; c < 3; ++c) px[(y * W + x) * 3 + c] = (1 - cov) * px[(y * W + x) * 3 + c] + cov * col.rgb[c];
        }
    };
    for (const auto& d : distractors) paint(d.shape, d.color, d.poses[t]);
    paint(shape, target_color, target[t]);
    for (const auto& b : bars)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double cx = static_cast<double>(x) + 0.5, cy = static_cast<double>(y) + 0.5;
          if (cx >= b.x0 && cx < b.x1 && cy >= b.y0 && cy < b.y1)
            for (std::size_t c = 0; c < 3; ++c) px[(y * W + x) * 3 + c] = 0.3;
        }
    Image img(W, H);
    for (std::size_t i = 0; i < px.size(); ++i) {
      const double v = px[i] + 0.02 * noise.normal();
      img.rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
    seq.frames.push_back(std::move(img));
    seq.boxes.push_back(shape_bounds(target[t]));
  }

  const double dx = target.back().cx - target.front().cx, dy = target.back().cy - target.front().cy;
  const std::string direction = std::abs(dx) >= std::abs(dy) ? (dx >= 0 ? "right" : "left") : (dy >= 0 ? "down" : "up");
  seq.description = "the " + color + " " + shape + " moving " + direction;
  seq.attributes = {{"color", color},
                    {"shape", shape},
                    {"motion", direction},
                    {"distractors", std::to_string(spec.distractor_count)}};
  return seq;
}

/// Number of worker threads from SATRACK_THREADS (default: hardware concurrency).
inline std::size_t thread_count() {
  if (const char* env = std::getenv("SATRACK_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n > 0) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers (static striping).
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// The distractor benchmark: `count` sequences with ids first_id.., 1-3
/// same-shape distractors each, occluding bars on every fourth sequence.
inline std::vector<Sequence> generate_benchmark(std::uint64_t seed, std::size_t count, std::size_t first_id = 0,
                                                GeneratorSpec base = {}) {
  std::vector<Sequence> out(count);
  parallel_for(count, thread_count(), [&](std::size_t i) {
    GeneratorSpec spec = base;
    const std::size_t id = first_id + i;
    Rng r = Rng(seed).split("benchmark/" + std::to_string(id));
    spec.distractor_count = 1 + r.index(3);
    spec.occluders = id % 4 == 3;
    out[i] = generate_sequence(seed, id, spec);
  });
  return out;
}

// ------------------------------------------------------------------ dataset I/O

inline std::string format_box_line(const BBox& b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.2f,%.2f,%.2f,%.2f", b.x_tl, b.y_tl, b.width(), b.height());
  return buf;
}

inline void write_sequence(const Sequence& seq, const fs::path& root) {
  const fs::path dir = root / seq.name;
  fs::create_directories(dir / "imgs");
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%08zu.ppm", i + 1);
    write_ppm(seq.frames[i], dir / "imgs" / name);
  }
  std::ofstream gt(dir / "groundtruth.txt");
  for (const auto& b : seq.boxes) gt << format_box_line(b) << '\n';
  std::ofstream(dir / "language.txt") << seq.description << '\n';
  if (!seq.attributes.empty()) {
    std::ofstream attrs(dir / "attributes.txt");
    for (const auto& [k, v] : seq.attributes) attrs << k << '=' << v << '\n';
  }
}

/// Parses one "x,y,w,h" line (comma, tab or space separated) into corners.
inline BBox parse_box_line(const std::string& line, const std::string& where) {
  std::string s = line;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::replace(s.begin(), s.end(), '\t', ' ');
  std::istringstream is(s);
  std::array<double, 4> v{};
  for (auto& x : v)
    if (!(is >> x) || !std::isfinite(x)) throw ConfigError(where + ": malformed box line '" + line + "'");
  std::string extra;
  if (is >> extra) throw ConfigError(where + ": malformed box line '" + line + "' (more than 4 values)");
  if (v[2] < 0 || v[3] < 0) throw ConfigError(where + ": negative box size in '" + line + "'");
  return {v[0], v[1], v[0] + v[2], v[1] + v[3]};
}

inline Sequence load_sequence(const fs::path& dir) {
  Sequence seq;
  seq.name = dir.filename().string();
  const fs::path imgs = dir / "imgs";
  if (!fs::is_directory(imgs)) throw ConfigError("sequence '" + seq.name + "' has no imgs/ directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(imgs))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::ifstream gt(dir / "groundtruth.txt");
  if (!gt) throw ConfigError("sequence '" + seq.name + "' has no groundtruth.txt");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(gt, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    seq.boxes.push_back(parse_box_line(line, seq.name + "/groundtruth.txt:" + std::to_string(lineno)));
  }
  if (seq.boxes.size() != files.size()) {
    throw ConfigError("sequence '" + seq.name + "': " + std::to_string(files.size()) + " frames but " +
                      std::to_string(seq.boxes.size()) + " annotations");
  }
  for (const auto& f : files) seq.frames.push_back(read_ppm(f));

  std::ifstream lang(dir / "language.txt");
  if (lang) {
    std::getline(lang, seq.description);
    if (!seq.description.empty() && seq.description.back() == '\r') seq.description.pop_back();
  }
  std::ifstream attrs(dir / "attributes.txt");
  while (attrs && std::getline(attrs, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) seq.attributes[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return seq;
}

/// Every sequence directory directly under `root`, sorted by name.
inline std::vector<Sequence> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("dataset root '" + root.string() + "' is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<Sequence> out(dirs.size());
  parallel_for(dirs.size(), thread_count(), [&](std::size_t i) { out[i] = load_sequence(dirs[i]); });
  return out;
}

// ------------------------------------------------------------------- cropping

struct CropConfig {
  double template_factor = 2.0;
  double search_factor = 5.0;
  /// Training-time search-centre shift, uniform in +-center_jitter * sqrt(w h) per axis.
  double center_jitter = 0.5;
  /// Training-time log-uniform scale noise of the search side.
  double scale_jitter = 0.15;
  /// Largest |search_frame - template_frame| when sampling training pairs.
  std::size_t max_gap = 32;
};

inline void to_json(Json& j, const CropConfig& c) {
  j = Json{{"template_factor", c.template_factor},
           {"search_factor", c.search_factor},
           {"center_jitter", c.center_jitter},
           {"scale_jitter", c.scale_jitter},
           {"max_gap", c.max_gap}};
}
inline void from_json(const Json& j, CropConfig& c) {
  c.template_factor = j.value("template_factor", c.template_factor);
  c.search_factor = j.value("search_factor", c.search_factor);
  c.center_jitter = j.value("center_jitter", c.center_jitter);
  c.scale_jitter = j.value("scale_jitter", c.scale_jitter);
  c.max_gap = j.value("max_gap", c.max_gap);
  if (c.template_factor < 1.0 || c.search_factor < 1.0) throw ConfigError("context factors must be >= 1");
}

/// Square crop window in frame pixels: [x0, x0 + side) x [y0, y0 + side).
struct CropWindow {
  double x0 = 0, y0 = 0, side = 1;

  static CropWindow around(double cx, double cy, double side) { return {cx - side / 2, cy - side / 2, side}; }
  BBox to_normalized(const BBox& b) const {
    return {(b.x_tl - x0) / side, (b.y_tl - y0) / side, (b.x_br - x0) / side, (b.y_br - y0) / side};
  }
  BBox to_frame(const BBox& b) const {
    return {x0 + b.x_tl * side, y0 + b.y_tl * side, x0 + b.x_br * side, y0 + b.y_br * side};
  }
};

/// Bilinear resample of a window to out x out pixels (values in [0, 1]).
/// Taps outside the frame read the frame's per-channel mean.
inline std::vector<double> crop_resize(const Image& img, const CropWindow& win, std::size_t out) {
  std::array<double, 3> mean{};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) mean[i % 3] += img.rgb[i];
  for (auto& m : mean) m /= 255.0 * static_cast<double>(img.width * img.height);
  std::vector<double> dst(out * out * 3);
  const double step = win.side / static_cast<double>(out);
  for (std::size_t v = 0; v < out; ++v) {
    const double sy = win.y0 + (static_cast<double>(v) + 0.5) * step - 0.5;
    const double fy0 = std::floor(sy);
    const double wy = sy - fy0;
    for (std::size_t u = 0; u < out; ++u) {
      const double sx = win.x0 + (static_cast<double>(u) + 0.5) * step - 0.5;
      const double fx0 = std::floor(sx);
      const double wx = sx - fx0;
      for (std::size_t c = 0; c < 3; ++c) {
        auto tap = [&](double fx, double fy) {
          if (fx < 0 || fy < 0 || fx >= static_cast<double>(img.width) || fy >= static_cast<double>(img.height)) return mean[c];
          return img.at(static_cast<std::size_t>(fx), static_cast<std::size_t>(fy), c) / 255.0;
        };
        dst[(v * out + u) * 3 + c] = (1 - wy) * ((1 - wx) * tap(fx0, fy0) + wx * tap(fx0 + 1, fy0)) +
                                     wy * ((1 - wx) * tap(fx0, fy0 + 1) + wx * tap(fx0 + 1, fy0 + 1));
      }
    }
  }
  return dst;
}

/// One training/evaluation item.
struct TrackSample {
  std::vector<double> tmpl;    // template_size^2 x 3
  std::vector<double> search;  // search_size^2 x 3
  TokenSequence tokens;
  BBox gt;  // normalised search-crop coordinates
  CropWindow template_window;
  CropWindow search_window;
};

struct SampleSizes {
  std::size_t template_size = 32;
  std::size_t search_size = 64;
  std::size_t max_text_len = 12;
};

inline CropWindow template_window(const BBox& b, const CropConfig& crop) {
  return CropWindow::around(b.cx(), b.cy(), std::sqrt(b.width() * b.height()) * crop.template_factor);
}

/// Search window of context `factor` around box b, optionally jittered while
/// keeping b inside the window.
inline CropWindow search_window(const BBox& b, const CropConfig& crop, Rng* jitter) {
  const double base = std::sqrt(b.width() * b.height());
  double side = base * crop.search_factor;
  double cx = b.cx(), cy = b.cy();
  if (jitter) {
    side *= std::exp(jitter->uniform(-crop.scale_jitter, crop.scale_jitter));
    side = std::max(side, std::max(b.width(), b.height()));
    const double max_sx = std::max(0.0, (side - b.width()) / 2), max_sy = std::max(0.0, (side - b.height()) / 2);
    cx += std::clamp(jitter->uniform(-crop.center_jitter, crop.center_jitter) * base, -max_sx, max_sx);
    cy += std::clamp(jitter->uniform(-crop.center_jitter, crop.center_jitter) * base, -max_sy, max_sy);
  }
  return CropWindow::around(cx, cy, side);
}

inline TrackSample make_sample(const Sequence& seq, std::size_t template_frame, std::size_t search_frame,
                               const CropConfig& crop, const SampleSizes& sizes, const Vocabulary& vocab, bool train,
                               Rng* rng) {
  if (template_frame >= seq.frames.size() || search_frame >= seq.frames.size()) {
    throw ConfigError("make_sample: frame index out of range for sequence '" + seq.name + "'");
  }
  const BBox& tb = seq.boxes[template_frame];
  const BBox& sb = seq.boxes[search_frame];
  if (!(tb.width() > 0 && tb.height() > 0 && sb.width() > 0 && sb.height() > 0)) {
    throw ConfigError("make_sample: zero-area ground-truth box in sequence '" + seq.name + "'");
  }
  if (train && !rng) throw ConfigError("make_sample: training mode needs an rng");
  TrackSample s;
  s.template_window = template_window(tb, crop);
  s.search_window = search_window(sb, crop, train ? rng : nullptr);
  s.tmpl = crop_resize(seq.frames[template_frame], s.template_window, sizes.template_size);
  s.search = crop_resize(seq.frames[search_frame], s.search_window, sizes.search_size);
  s.tokens = tokenize(seq.description, vocab, sizes.max_text_len);
  s.gt = s.search_window.to_normalized(sb);
  return s;
}

}  // namespace satrack
