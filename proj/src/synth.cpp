#include "dimask/synth.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>

#include "dimask/binio.hpp"
#include "dimask/errors.hpp"
#include "dimask/rng.hpp"

namespace dimask::synth {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'M', 'K', 'D', 'A', 'T', 'A'};

struct Rgb {
  float r, g, b;
};

std::vector<std::uint8_t> rasterize_rect(std::size_t h, std::size_t w, std::size_t x0, std::size_t y0,
                                         std::size_t rw, std::size_t rh) {
  std::vector<std::uint8_t> mask(h * w, 0);
  for (std::size_t y = y0; y < std::min(h, y0 + rh); ++y)
    for (std::size_t x = x0; x < std::min(w, x0 + rw); ++x) mask[y * w + x] = 1;
  return mask;
}

// Triangle with base along the bottom edge of the box and apex on the top edge.
std::vector<std::uint8_t> rasterize_triangle(std::size_t h, std::size_t w, double x0, double y0,
                                             double tw, double th, double apex) {
  const double ax = x0, ay = y0 + th;
  const double bx = x0 + tw, by = y0 + th;
  const double cx = x0 + apex * tw, cy = y0;
  auto edge = [](double px, double py, double qx, double qy, double x, double y) {
    return (qx - px) * (y - py) - (qy - py) * (x - px);
  };
  std::vector<std::uint8_t> mask(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double e0 = edge(ax, ay, bx, by, px, py);
      const double e1 = edge(bx, by, cx, cy, px, py);
      const double e2 = edge(cx, cy, ax, ay, px, py);
      const bool inside = (e0 <= 0 && e1 <= 0 && e2 <= 0) || (e0 >= 0 && e1 >= 0 && e2 >= 0);
      mask[y * w + x] = inside ? 1 : 0;
    }
  }
  return mask;
}

std::vector<std::uint8_t> draw_shape(ShapeKind kind, const SynthConfig& cfg, Rng& rng) {
  const std::size_t h = cfg.height, w = cfg.width;
  const std::size_t max_size = std::min({cfg.max_size, h, w});
  const std::size_t min_size = std::min(cfg.min_size, max_size);
  auto extent = [&] { return static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(min_size),
                                                                     static_cast<std::int64_t>(max_size))); };
  switch (kind) {
    case ShapeKind::kRectangle: {
      const std::size_t rw = extent(), rh = extent();
      const auto x0 = static_cast<std::size_t>(rng.between(0, static_cast<std::int64_t>(w - rw)));
      const auto y0 = static_cast<std::size_t>(rng.between(0, static_cast<std::int64_t>(h - rh)));
      return rasterize_rect(h, w, x0, y0, rw, rh);
    }
    case ShapeKind::kCircle: {
      const double r = static_cast<double>(extent()) / 2.0;
      const double cx = rng.uniform(r, static_cast<double>(w) - r);
      const double cy = rng.uniform(r, static_cast<double>(h) - r);
      return rasterize_circle(h, w, cx, cy, r);
    }
    case ShapeKind::kTriangle: {
      const auto tw = static_cast<double>(extent()), th = static_cast<double>(extent());
      const double x0 = rng.uniform(0.0, static_cast<double>(w) - tw);
      const double y0 = rng.uniform(0.0, static_cast<double>(h) - th);
      return rasterize_triangle(h, w, x0, y0, tw, th, rng.uniform(0.2, 0.8));
    }
  }
  throw std::logic_error("unknown shape kind");
}

bool overlaps(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& occupied) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && occupied[i]) return true;
  return false;
}

bool any_pixel(const std::vector<std::uint8_t>& m) {
  return std::any_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
}

}  // namespace

void SynthConfig::validate() const {
  if (height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0) {
    throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be a positive multiple of 16");
  }
  if (classes < 1 || classes > 3) throw ConfigError("classes must be in [1,3]");
  if (min_instances < 1 || max_instances < min_instances) {
    throw ConfigError("instance range must satisfy 1 <= min_instances <= max_instances");
  }
  if (min_size < 2 || max_size < min_size) throw ConfigError("shape size range must satisfy 2 <= min <= max");
  if (max_retries == 0) throw ConfigError("max_retries must be positive");
}

std::vector<std::uint8_t> rasterize_circle(std::size_t h, std::size_t w, double cx, double cy, double r) {
  std::vector<std::uint8_t> mask(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      mask[y * w + x] = dx * dx + dy * dy <= r * r ? 1 : 0;
    }
  }
  return mask;
}

Scene generate_scene(std::uint64_t seed, const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x5EED));
  const std::size_t h = cfg.height, w = cfg.width;
  Scene scene;
  scene.seed = seed;
  scene.height = h;
  scene.width = w;

  const double base = rng.uniform(0.0, 0.25);
  std::vector<double> image(h * w * 3);
  for (double& v : image) v = std::clamp(base + rng.uniform(-0.05, 0.05), 0.0, 1.0);

  const auto count = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(cfg.min_instances),
                                                          static_cast<std::int64_t>(cfg.max_instances)));
  std::vector<std::uint8_t> occupied(h * w, 0);
  std::vector<std::pair<int, std::vector<std::uint8_t>>> drawn;
  for (std::size_t i = 0; i < count; ++i) {
    const int cls = static_cast<int>(rng.below(cfg.classes));
    std::vector<std::uint8_t> mask;
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries; ++attempt) {
      mask = draw_shape(static_cast<ShapeKind>(cls), cfg, rng);
      if (!any_pixel(mask)) continue;
      if (!cfg.allow_overlap && overlaps(mask, occupied)) continue;
      placed = true;
      break;
    }
    if (!placed) {
      throw std::runtime_error("scene " + std::to_string(seed) + ": could not place instance " +
                               std::to_string(i) + " without overlap after " +
                               std::to_string(cfg.max_retries) + " attempts");
    }
    const Rgb color{static_cast<float>(rng.uniform(0.35, 1.0)), static_cast<float>(rng.uniform(0.35, 1.0)),
                    static_cast<float>(rng.uniform(0.35, 1.0))};
    for (std::size_t p = 0; p < h * w; ++p) {
      if (!mask[p]) continue;
      occupied[p] = 1;
      image[p * 3 + 0] = color.r;
      image[p * 3 + 1] = color.g;
      image[p * 3 + 2] = color.b;
      // Later shapes occlude earlier ones.
      for (auto& [_, earlier] : drawn) earlier[p] = 0;
    }
    drawn.emplace_back(cls, std::move(mask));
  }

  for (auto& [cls, mask] : drawn) {
    if (!any_pixel(mask)) continue;
    InstanceGT inst;
    inst.class_id = cls;
    inst.box = mask_box(mask, h, w);
    inst.mask = std::move(mask);
    scene.instances.push_back(std::move(inst));
  }
  scene.image.assign(image.begin(), image.end());
  return scene;
}

std::vector<Scene> make_split(std::uint64_t base_seed, std::size_t n, const SynthConfig& cfg) {
  if (n == 0) throw ConfigError("a split needs at least one scene");
  cfg.validate();
  std::vector<Scene> scenes(n);
  std::exception_ptr failure;
  // Each scene is a pure function of its seed; order is fixed by index.
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    try {
      scenes[static_cast<std::size_t>(i)] = generate_scene(scene_seed(base_seed, static_cast<std::size_t>(i)), cfg);
    } catch (...) {
#pragma omp critical(dimask_split_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return scenes;
}

std::string encode_split(const std::vector<Scene>& scenes) {
  binio::Writer out;
  out.put_bytes(std::string_view(kMagic, 8));
  out.put<std::uint32_t>(kDatasetVersion);
  out.put<std::uint64_t>(scenes.size());
  for (const auto& s : scenes) {
    out.put<std::uint64_t>(s.seed);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(s.height));
    out.put<std::uint32_t>(static_cast<std::uint32_t>(s.width));
    for (float v : s.image) out.put<float>(v);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(s.instances.size()));
    for (const auto& inst : s.instances) {
      out.put<std::uint32_t>(static_cast<std::uint32_t>(inst.class_id));
      out.put<double>(inst.box.cx);
      out.put<double>(inst.box.cy);
      out.put<double>(inst.box.w);
      out.put<double>(inst.box.h);
      const auto runs = rle_encode(inst.mask);
      out.put<std::uint32_t>(static_cast<std::uint32_t>(runs.size()));
      for (auto r : runs) out.put<std::uint32_t>(r);
    }
  }
  return out.bytes();
}

std::vector<Scene> decode_split(const std::string& bytes) {
  binio::Reader in(bytes, "dataset");
  if (in.get_bytes(8) != std::string_view(kMagic, 8)) in.fail("bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kDatasetVersion) in.fail("unsupported dataset version " + std::to_string(version));
  const auto count = in.get<std::uint64_t>();
  if (count > bytes.size()) in.fail("implausible scene count " + std::to_string(count));
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Scene s;
    s.seed = in.get<std::uint64_t>();
    s.height = in.get<std::uint32_t>();
    s.width = in.get<std::uint32_t>();
    const std::size_t pixels = s.height * s.width;
    if (pixels * 12 > bytes.size()) in.fail("implausible image size");
    s.image.resize(pixels * 3);
    for (float& v : s.image) v = in.get<float>();
    const auto n_inst = in.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < n_inst; ++k) {
      InstanceGT inst;
      inst.class_id = static_cast<int>(in.get<std::uint32_t>());
      inst.box.cx = in.get<double>();
      inst.box.cy = in.get<double>();
      inst.box.w = in.get<double>();
      inst.box.h = in.get<double>();
      const auto n_runs = in.get<std::uint32_t>();
      if (n_runs > pixels + 1) in.fail("implausible run count");
      std::vector<std::uint32_t> runs(n_runs);
      for (auto& r : runs) r = in.get<std::uint32_t>();
      try {
        inst.mask = rle_decode(runs, pixels);
      } catch (const std::invalid_argument& e) {
        in.fail(e.what());
      }
      s.instances.push_back(std::move(inst));
    }
    scenes.push_back(std::move(s));
  }
  if (!in.at_end()) in.fail("trailing bytes after last scene");
  return scenes;
}

void save_split(const std::string& path, const std::vector<Scene>& scenes) {
  binio::write_file(path, encode_split(scenes));
}

std::vector<Scene> load_split(const std::string& path) { return decode_split(binio::read_file(path)); }

}  // namespace dimask::synth
