#include "spvnas/scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include <json.hpp>

#include "spvnas/errors.hpp"
#include "spvnas/rng.hpp"

namespace spvnas {

using nlohmann::json;

const char* class_name(std::int32_t c) {
  switch (c) {
    case kClassGround: return "ground";
    case kClassLarge: return "large";
    case kClassSmall: return "small";
    case kClassClutter: return "clutter";
    default: return "unknown";
  }
}

PointTensor Scene::point_tensor() const {
  PointTensor p;
  p.positions = positions;
  p.features = FeatureMatrix(size(), 4);
  for (std::size_t k = 0; k < size(); ++k) {
    float* r = p.features.row(k);
    r[0] = positions[k][0];
    r[1] = positions[k][1];
    r[2] = positions[k][2];
    r[3] = intensity[k];
  }
  return p;
}

void require_valid(const SceneGenConfig& c) {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw ConfigError(std::string("scene config: ") + what + " must be positive");
  };
  auto range = [](double lo, double hi, const char* what) {
    if (!(lo > 0.0) || lo > hi) throw ConfigError(std::string("scene config: bad range for ") + what);
  };
  positive(c.extent, "extent");
  positive(c.ground_density, "ground_density");
  positive(c.large_density, "large_density");
  positive(c.small_density, "small_density");
  positive(c.coarse_cell, "coarse_cell");
  if (c.ground_noise < 0.0) throw ConfigError("scene config: ground_noise must be >= 0");
  if (c.clutter_fraction < 0.0) throw ConfigError("scene config: clutter_fraction must be >= 0");
  range(c.large_length_min, c.large_length_max, "large length");
  range(c.large_width_min, c.large_width_max, "large width");
  range(c.large_height_min, c.large_height_max, "large height");
  range(c.small_radius_min, c.small_radius_max, "small radius");
  range(c.small_height_min, c.small_height_max, "small height");
  range(c.clutter_blob_radius_min, c.clutter_blob_radius_max, "clutter blob radius");
  if (c.large_min < 0 || c.large_min > c.large_max || c.small_min < 0 || c.small_min > c.small_max) {
    throw ConfigError("scene config: object counts must satisfy 0 <= min <= max");
  }
  if (c.large_max > 0 && c.large_length_max > c.extent) {
    throw ConfigError("scene config: large objects are larger than the extent");
  }
  if (c.small_max > 0 && 2.0 * c.small_radius_max > c.extent) {
    throw ConfigError("scene config: small objects are larger than the extent");
  }
  if (2.0 * c.small_radius_max >= c.coarse_cell || c.small_height_max >= c.coarse_cell) {
    throw ConfigError("scene config: small-object footprint must be smaller than a coarse cell");
  }
  if (c.small_adjacent_prob < 0.0 || c.small_adjacent_prob > 1.0) {
    throw ConfigError("scene config: small_adjacent_prob must be in [0, 1]");
  }
}

namespace {

json intensity_json(const IntensityModel& m) { return {{"mean", m.mean}, {"stddev", m.stddev}}; }

IntensityModel intensity_from(const json& j, const IntensityModel& d) {
  return {j.value("mean", d.mean), j.value("stddev", d.stddev)};
}

struct Box {
  double x0, y0, x1, y1, h;
  bool overlaps(double ax0, double ay0, double ax1, double ay1) const {
    return ax0 < x1 && ax1 > x0 && ay0 < y1 && ay1 > y0;
  }
};

struct Blob {
  double x, y, r;
};

class Builder {
 public:
  Builder(const SceneGenConfig& cfg, Scene& s, Rng& rng) : cfg_(cfg), s_(s), rng_(rng) {}

  void add(double x, double y, double z, std::int32_t label, const IntensityModel& im) {
    s_.positions.push_back({float(x), float(y), float(z)});
    s_.intensity.push_back(float(std::clamp(rng_.normal(im.mean, im.stddev), 0.0, 1.0)));
    s_.labels.push_back(label);
  }

  std::size_t count_for(double area, double density) {
    return static_cast<std::size_t>(std::llround(area * density));
  }

  void box_surface(const Box& b) {
    const double lx = b.x1 - b.x0, ly = b.y1 - b.y0;
    for (std::size_t i = 0, n = count_for(lx * ly, cfg_.large_density); i < n; ++i) {
      add(rng_.uniform(b.x0, b.x1), rng_.uniform(b.y0, b.y1), b.h, kClassLarge, cfg_.large_intensity);
    }
    for (int side = 0; side < 4; ++side) {
      const double len = side < 2 ? lx : ly;
      for (std::size_t i = 0, n = count_for(len * b.h, cfg_.large_density); i < n; ++i) {
        const double t = rng_.uniform(), z = rng_.uniform(0.0, b.h);
        double x = 0, y = 0;
        switch (side) {
          case 0: x = b.x0 + t * lx; y = b.y0; break;
          case 1: x = b.x0 + t * lx; y = b.y1; break;
          case 2: x = b.x0; y = b.y0 + t * ly; break;
          default: x = b.x1; y = b.y0 + t * ly; break;
        }
        add(x, y, z, kClassLarge, cfg_.large_intensity);
      }
    }
  }

  void cylinder(double cx, double cy, double r, double h) {
    const std::size_t n = count_for(2.0 * std::numbers::pi * r * h, cfg_.small_density);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = rng_.uniform(0.0, 2.0 * std::numbers::pi);
      add(cx + r * std::cos(a), cy + r * std::sin(a), rng_.uniform(0.0, h), kClassSmall,
          cfg_.small_intensity);
    }
  }

 private:
  const SceneGenConfig& cfg_;
  Scene& s_;
  Rng& rng_;
};

}  // namespace

std::string to_json(const SceneGenConfig& c) {
  json j;
  j["extent"] = c.extent;
  j["ground_density"] = c.ground_density;
  j["ground_noise"] = c.ground_noise;
  j["large"] = {{"count", {c.large_min, c.large_max}},
                {"length", {c.large_length_min, c.large_length_max}},
                {"width", {c.large_width_min, c.large_width_max}},
                {"height", {c.large_height_min, c.large_height_max}},
                {"density", c.large_density},
                {"intensity", intensity_json(c.large_intensity)}};
  j["small"] = {{"count", {c.small_min, c.small_max}},
                {"radius", {c.small_radius_min, c.small_radius_max}},
                {"height", {c.small_height_min, c.small_height_max}},
                {"density", c.small_density},
                {"adjacent_prob", c.small_adjacent_prob},
                {"intensity", intensity_json(c.small_intensity)}};
  j["clutter"] = {{"fraction", c.clutter_fraction},
                  {"blob_radius", {c.clutter_blob_radius_min, c.clutter_blob_radius_max}},
                  {"intensity", intensity_json(c.clutter_intensity)}};
  j["ground_intensity"] = intensity_json(c.ground_intensity);
  j["coarse_cell"] = c.coarse_cell;
  j["seed"] = c.seed;
  return j.dump();
}

SceneGenConfig scene_config_from_json(const std::string& text) {
  SceneGenConfig c;
  try {
    const json j = json::parse(text);
    auto pair = [](const json& obj, const char* key, auto& lo, auto& hi) {
      if (!obj.contains(key)) return;
      const auto& v = obj.at(key);
      if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("'") + key + "' must be [lo, hi]");
      lo = v[0].get<std::remove_reference_t<decltype(lo)>>();
      hi = v[1].get<std::remove_reference_t<decltype(hi)>>();
    };
    c.extent = j.value("extent", c.extent);
    c.ground_density = j.value("ground_density", c.ground_density);
    c.ground_noise = j.value("ground_noise", c.ground_noise);
    c.coarse_cell = j.value("coarse_cell", c.coarse_cell);
    c.seed = j.value("seed", c.seed);
    if (j.contains("ground_intensity")) c.ground_intensity = intensity_from(j["ground_intensity"], c.ground_intensity);
    if (j.contains("large")) {
      const auto& l = j["large"];
      pair(l, "count", c.large_min, c.large_max);
      pair(l, "length", c.large_length_min, c.large_length_max);
      pair(l, "width", c.large_width_min, c.large_width_max);
      pair(l, "height", c.large_height_min, c.large_height_max);
      c.large_density = l.value("density", c.large_density);
      if (l.contains("intensity")) c.large_intensity = intensity_from(l["intensity"], c.large_intensity);
    }
    if (j.contains("small")) {
      const auto& s = j["small"];
      pair(s, "count", c.small_min, c.small_max);
      pair(s, "radius", c.small_radius_min, c.small_radius_max);
      pair(s, "height", c.small_height_min, c.small_height_max);
      c.small_density = s.value("density", c.small_density);
      c.small_adjacent_prob = s.value("adjacent_prob", c.small_adjacent_prob);
      if (s.contains("intensity")) c.small_intensity = intensity_from(s["intensity"], c.small_intensity);
    }
    if (j.contains("clutter")) {
      const auto& k = j["clutter"];
      c.clutter_fraction = k.value("fraction", c.clutter_fraction);
      pair(k, "blob_radius", c.clutter_blob_radius_min, c.clutter_blob_radius_max);
      if (k.contains("intensity")) c.clutter_intensity = intensity_from(k["intensity"], c.clutter_intensity);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed scene config JSON: ") + e.what());
  }
  require_valid(c);
  return c;
}

Scene generate_scene(const SceneGenConfig& cfg, std::uint64_t seed) {
  require_valid(cfg);
  Scene s;
  s.seed = seed;
  Rng rng = Rng::derive(cfg.seed, seed, 0x5CE4E);
  Builder b(cfg, s, rng);
  const double E = cfg.extent;

  // Boxes, kept inside the extent and apart from each other.
  std::vector<Box> boxes;
  const int n_large = rng.uniform_int(cfg.large_min, cfg.large_max);
  for (int i = 0; i < n_large; ++i) {
    double lx = rng.uniform(cfg.large_length_min, cfg.large_length_max);
    double ly = rng.uniform(cfg.large_width_min, cfg.large_width_max);
    const double h = rng.uniform(cfg.large_height_min, cfg.large_height_max);
    if (rng.bernoulli(0.5)) std::swap(lx, ly);
    lx = std::min(lx, E);
    ly = std::min(ly, E);
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double x0 = rng.uniform(0.0, E - lx), y0 = rng.uniform(0.0, E - ly);
      const Box cand{x0, y0, x0 + lx, y0 + ly, h};
      const bool clash = std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) {
        return o.overlaps(cand.x0 - 0.5, cand.y0 - 0.5, cand.x1 + 0.5, cand.y1 + 0.5);
      });
      if (!clash) {
        boxes.push_back(cand);
        break;
      }
    }
  }

  // Clutter blob centers are drawn before the small objects so the latter
  // can be placed against them.
  std::vector<Blob> blobs;
  const double ground_area = E * E;
  const double approx_other = ground_area * cfg.ground_density + 26.0 * cfg.large_density * n_large;
  const auto clutter_points =
      static_cast<std::size_t>(std::llround(cfg.clutter_fraction * approx_other));
  const std::size_t n_blobs = clutter_points == 0 ? 0 : std::max<std::size_t>(1, clutter_points / 60);
  for (std::size_t i = 0; i < n_blobs; ++i) {
    const double r = rng.uniform(cfg.clutter_blob_radius_min, cfg.clutter_blob_radius_max);
    double x = 0, y = 0;
    for (int attempt = 0; attempt < 50; ++attempt) {
      x = rng.uniform(r, std::max(r, E - r));
      y = rng.uniform(r, std::max(r, E - r));
      const bool clash = std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) {
        return o.overlaps(x - r, y - r, x + r, y + r);
      });
      if (!clash) break;
    }
    blobs.push_back({x, y, r});
  }

  // Small cylinders: never inside a box, never straddling a coarse-cell
  // boundary in y (so they touch at most two coarse cells).
  struct Pole { double x, y, r, h; };
  std::vector<Pole> poles;
  const int n_small = rng.uniform_int(cfg.small_min, cfg.small_max);
  for (int i = 0; i < n_small; ++i) {
    const double r = rng.uniform(cfg.small_radius_min, cfg.small_radius_max);
    const double h = rng.uniform(cfg.small_height_min, cfg.small_height_max);
    const bool adjacent = rng.bernoulli(cfg.small_adjacent_prob) && (!boxes.empty() || !blobs.empty());
    for (int attempt = 0; attempt < 100; ++attempt) {
      double x = 0, y = 0;
      if (adjacent) {
        const std::size_t k = rng.index(boxes.size() + blobs.size());
        const double gap = rng.uniform(0.0, 0.15);
        if (k < boxes.size()) {
          const Box& o = boxes[k];
          const double t = rng.uniform();
          switch (rng.index(4)) {
            case 0: x = o.x0 + t * (o.x1 - o.x0); y = o.y0 - gap - r; break;
            case 1: x = o.x0 + t * (o.x1 - o.x0); y = o.y1 + gap + r; break;
            case 2: x = o.x0 - gap - r; y = o.y0 + t * (o.y1 - o.y0); break;
            default: x = o.x1 + gap + r; y = o.y0 + t * (o.y1 - o.y0); break;
          }
        } else {
          const Blob& o = blobs[k - boxes.size()];
          const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
          const double d = 0.7 * o.r + r + gap;
          x = o.x + d * std::cos(a);
          y = o.y + d * std::sin(a);
        }
      } else {
        x = rng.uniform(r, E - r);
        y = rng.uniform(r, E - r);
      }
      if (x - r < 0.0 || y - r < 0.0 || x + r > E || y + r > E) continue;
      if (std::floor((y - r) / cfg.coarse_cell) != std::floor((y + r) / cfg.coarse_cell)) continue;
      const bool clash = std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) {
        return o.overlaps(x - r, y - r, x + r, y + r);
      });
      if (clash) continue;
      poles.push_back({x, y, r, h});
      break;
    }
  }

  // Ground, minus what lies under boxes and poles.
  const auto n_ground = static_cast<std::size_t>(std::llround(ground_area * cfg.ground_density));
  for (std::size_t i = 0; i < n_ground; ++i) {
    const double x = rng.uniform(0.0, E), y = rng.uniform(0.0, E);
    const double z = rng.normal(0.0, cfg.ground_noise);
    const bool covered =
        std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) { return o.overlaps(x, y, x, y) ; }) ||
        std::any_of(poles.begin(), poles.end(), [&](const Pole& p) {
          return (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y) < p.r * p.r;
        });
    if (!covered) b.add(x, y, z, kClassGround, cfg.ground_intensity);
  }
  for (const Box& o : boxes) b.box_surface(o);
  for (const Pole& p : poles) b.cylinder(p.x, p.y, p.r, p.h);

  // Clutter: Gaussian blobs resting on the ground.
  for (std::size_t i = 0; i < n_blobs; ++i) {
    const Blob& o = blobs[i];
    const std::size_t n = clutter_points / n_blobs + (i < clutter_points % n_blobs ? 1 : 0);
    for (std::size_t k = 0; k < n; ++k) {
      const double x = std::clamp(o.x + rng.normal(0.0, 0.5 * o.r), 0.0, E);
      const double y = std::clamp(o.y + rng.normal(0.0, 0.5 * o.r), 0.0, E);
      const double z = 0.05 + std::abs(rng.normal(0.0, 0.6 * o.r));
      b.add(x, y, z, kClassClutter, cfg.clutter_intensity);
    }
  }

  // Shuffle so file order carries no label information.
  for (std::size_t i = s.size(); i > 1; --i) {
    const std::size_t j = rng.index(i);
    std::swap(s.positions[i - 1], s.positions[j]);
    std::swap(s.intensity[i - 1], s.intensity[j]);
    std::swap(s.labels[i - 1], s.labels[j]);
  }
  return s;
}

namespace {

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t le32(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return u;
}

void put32(std::vector<char>& out, std::uint32_t u) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

void spill(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

}  // namespace

void write_points_bin(const std::filesystem::path& path, const Scene& scene) {
  std::vector<char> out;
  out.reserve(scene.size() * 16);
  for (std::size_t k = 0; k < scene.size(); ++k) {
    for (int d = 0; d < 3; ++d) put32(out, std::bit_cast<std::uint32_t>(scene.positions[k][d]));
    put32(out, std::bit_cast<std::uint32_t>(scene.intensity[k]));
  }
  spill(path, out);
}

void write_labels(const std::filesystem::path& path, std::span<const std::int32_t> labels) {
  std::vector<char> out;
  out.reserve(labels.size() * 4);
  for (auto l : labels) put32(out, static_cast<std::uint32_t>(l) & 0xFFFFu);
  spill(path, out);
}

PointTensor read_points_bin(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() % 16 != 0) {
    throw DataError(path.string() + ": " + std::to_string(bytes.size()) +
                    " bytes is not a multiple of the 16-byte point record");
  }
  const std::size_t n = bytes.size() / 16;
  PointTensor p;
  p.positions.resize(n);
  p.features = FeatureMatrix(n, 4);
  for (std::size_t k = 0; k < n; ++k) {
    float* r = p.features.row(k);
    for (int d = 0; d < 4; ++d) r[d] = std::bit_cast<float>(le32(bytes.data() + 16 * k + 4 * d));
    p.positions[k] = {r[0], r[1], r[2]};
  }
  return p;
}

std::vector<std::int32_t> read_labels(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() % 4 != 0) {
    throw DataError(path.string() + ": " + std::to_string(bytes.size()) +
                    " bytes is not a multiple of the 4-byte label record");
  }
  std::vector<std::int32_t> out(bytes.size() / 4);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = static_cast<std::int32_t>(le32(bytes.data() + 4 * k) & 0xFFFFu);
  }
  return out;
}

Scene read_scene(const std::filesystem::path& points, const std::filesystem::path& labels) {
  const PointTensor p = read_points_bin(points);
  Scene s;
  s.labels = read_labels(labels);
  if (s.labels.size() != p.size()) {
    throw DataError("point/label count mismatch: " + points.string() + " has " +
                    std::to_string(p.size()) + " points but " + labels.string() + " has " +
                    std::to_string(s.labels.size()) + " labels");
  }
  s.id = points.stem().string();
  s.positions = p.positions;
  s.intensity.resize(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) s.intensity[k] = p.features(k, 3);
  return s;
}

}  // namespace spvnas
