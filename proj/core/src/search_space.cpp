#include "spvnas/search_space.hpp"

#include <algorithm>

#include <json.hpp>

#include "spvnas/errors.hpp"

namespace spvnas {

using nlohmann::json;

std::size_t SearchSpace::gene_count() const {
  return 1 + static_cast<std::size_t>(stages()) * (static_cast<std::size_t>(max_depth) + 2);
}

std::size_t SearchSpace::depth_gene(int stage) const {
  return 1 + static_cast<std::size_t>(stage) * (static_cast<std::size_t>(max_depth) + 2) +
         static_cast<std::size_t>(max_depth) + 1;
}

std::size_t SearchSpace::cardinality(std::size_t gene) const {
  if (gene == 0) return stem_choices.size();
  const std::size_t per = static_cast<std::size_t>(max_depth) + 2;
  const std::size_t s = (gene - 1) / per, b = (gene - 1) % per;
  if (b == per - 1) return static_cast<std::size_t>(max_depth);
  return layer_choices[s][b].size();
}

double SearchSpace::size() const {
  double n = 1.0;
  for (std::size_t i = 0; i < gene_count(); ++i) n *= double(cardinality(i));
  return n;
}

SearchSpace SearchSpace::uniform(std::vector<int> stem, std::vector<std::vector<int>> stage_choices,
                                 int m, int input_channels, int num_classes, double voxel_size) {
  SearchSpace sp;
  sp.input_channels = input_channels;
  sp.num_classes = num_classes;
  sp.voxel_size = voxel_size;
  sp.max_depth = m;
  sp.stem_choices = std::move(stem);
  for (auto& c : stage_choices) {
    sp.layer_choices.emplace_back(static_cast<std::size_t>(std::max(m, 0)) + 1, c);
  }
  return sp;
}

void require_valid(const SearchSpace& space) {
  if (space.max_depth < 1) throw ConfigError("search space: max depth must be >= 1");
  if (space.stages() < 1) throw ConfigError("search space: needs at least one stage");
  auto check = [](const std::vector<int>& c, const std::string& where) {
    if (c.empty()) throw ConfigError("search space: empty choice list at " + where);
    for (int w : c) {
      if (w <= 0 || w % kChannelGranularity != 0) {
        throw ConfigError("search space: width " + std::to_string(w) + " at " + where +
                          " is not a positive multiple of " + std::to_string(kChannelGranularity));
      }
    }
  };
  check(space.stem_choices, "stem");
  for (int s = 0; s < space.stages(); ++s) {
    if (space.layer_choices[s].size() != static_cast<std::size_t>(space.max_depth) + 1) {
      throw ConfigError("search space: stage " + std::to_string(s) + " needs m + 1 layer lists");
    }
    for (std::size_t b = 0; b < space.layer_choices[s].size(); ++b) {
      check(space.layer_choices[s][b], "stage " + std::to_string(s) + " layer " + std::to_string(b));
    }
  }
}

namespace {

void require_genome(const SearchSpace& space, const Genome& g) {
  if (g.size() != space.gene_count()) throw ConfigError("genome length does not match the space");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] < 0 || static_cast<std::size_t>(g[i]) >= space.cardinality(i)) {
      throw ConfigError("genome gene " + std::to_string(i) + " out of range");
    }
  }
}

int index_of(const std::vector<int>& choices, int v, const std::string& where) {
  const auto it = std::find(choices.begin(), choices.end(), v);
  if (it == choices.end()) {
    throw ConfigError("width " + std::to_string(v) + " at " + where + " is not in the search space");
  }
  return static_cast<int>(it - choices.begin());
}

}  // namespace

ArchSpec decode(const SearchSpace& space, const Genome& g) {
  if (space.stages() != kStages) {
    throw ConfigError("only " + std::to_string(kStages) + "-stage spaces decode to architectures");
  }
  require_genome(space, g);
  ArchSpec a;
  a.input_channels = space.input_channels;
  a.num_classes = space.num_classes;
  a.voxel_size = space.voxel_size;
  a.stem_channels = space.stem_choices[g[0]];
  std::size_t i = 1;
  for (int s = 0; s < kStages; ++s) {
    a.stage_channels[s].clear();
    for (int b = 0; b <= space.max_depth; ++b) a.stage_channels[s].push_back(space.layer_choices[s][b][g[i++]]);
    a.stage_depths[s] = g[i++] + 1;
  }
  return a;
}

Genome encode(const SearchSpace& space, const ArchSpec& spec) {
  if (space.stages() != kStages) throw ConfigError("space does not describe this backbone");
  if (spec.input_channels != space.input_channels || spec.num_classes != space.num_classes) {
    throw ConfigError("architecture input/class counts differ from the search space");
  }
  Genome g;
  g.push_back(index_of(space.stem_choices, spec.stem_channels, "stem"));
  for (int s = 0; s < kStages; ++s) {
    if (spec.max_depth(s) != space.max_depth) {
      throw ConfigError("stage " + std::to_string(s) + " has a different max depth than the space");
    }
    for (int b = 0; b <= space.max_depth; ++b) {
      g.push_back(index_of(space.layer_choices[s][b], spec.stage_channels[s][b],
                           "stage " + std::to_string(s) + " layer " + std::to_string(b)));
    }
    if (spec.stage_depths[s] < 1 || spec.stage_depths[s] > space.max_depth) {
      throw ConfigError("stage " + std::to_string(s) + " depth outside the space");
    }
    g.push_back(spec.stage_depths[s] - 1);
  }
  return g;
}

ArchSpec max_arch(const SearchSpace& space) {
  require_valid(space);
  Genome g;
  auto argmax = [](const std::vector<int>& c) {
    return static_cast<int>(std::max_element(c.begin(), c.end()) - c.begin());
  };
  g.push_back(argmax(space.stem_choices));
  for (int s = 0; s < space.stages(); ++s) {
    for (int b = 0; b <= space.max_depth; ++b) g.push_back(argmax(space.layer_choices[s][b]));
    g.push_back(space.max_depth - 1);
  }
  return decode(space, g);
}

int total_depth(const SearchSpace& space, const Genome& g) {
  int d = 0;
  for (int s = 0; s < space.stages(); ++s) d += g[space.depth_gene(s)] + 1;
  return d;
}

Genome sample_uniform(const SearchSpace& space, Rng& rng, DepthRange range) {
  if (range.lo > range.hi) throw ConfigError("empty depth range");
  if (range.lo < 1 || range.hi > space.max_depth) {
    throw ConfigError("depth range [" + std::to_string(range.lo) + ", " + std::to_string(range.hi) +
                      "] outside [1, " + std::to_string(space.max_depth) + "]");
  }
  Genome g(space.gene_count());
  // Channels first, then depths.
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (i > 0 && (i - 1) % (static_cast<std::size_t>(space.max_depth) + 2) ==
                     static_cast<std::size_t>(space.max_depth) + 1) {
      continue;
    }
    g[i] = static_cast<int>(rng.index(space.cardinality(i)));
  }
  for (int s = 0; s < space.stages(); ++s) g[space.depth_gene(s)] = rng.uniform_int(range.lo, range.hi) - 1;
  return g;
}

Genome sample_uniform(const SearchSpace& space, Rng& rng) {
  return sample_uniform(space, rng, {1, space.max_depth});
}

int depth_segment(int epoch, int total_epochs, int m) {
  if (m < 1) throw ConfigError("max depth must be >= 1");
  if (total_epochs < 1) throw ConfigError("schedule needs at least one epoch");
  if (epoch < 0 || epoch >= total_epochs) throw ConfigError("epoch outside the schedule");
  const long long k = ((static_cast<long long>(epoch) + 1) * m + total_epochs - 1) / total_epochs;
  return static_cast<int>(std::clamp<long long>(k, 1, m));
}

DepthRange depth_range_for_epoch(int epoch, int total_epochs, int m) {
  const int k = depth_segment(epoch, total_epochs, m);
  return {m - k + 1, m};
}

std::string to_json(const SearchSpace& space) {
  json j;
  j["input_channels"] = space.input_channels;
  j["num_classes"] = space.num_classes;
  j["voxel_size"] = space.voxel_size;
  j["max_depth"] = space.max_depth;
  j["stem_channels"] = space.stem_choices;
  j["layer_channels"] = space.layer_choices;
  return j.dump();
}

SearchSpace space_from_json(const std::string& text) {
  SearchSpace sp;
  try {
    const json j = json::parse(text);
    sp.input_channels = j.value("input_channels", 4);
    sp.num_classes = j.value("num_classes", 4);
    sp.voxel_size = j.value("voxel_size", 0.2);
    sp.max_depth = j.at("max_depth").get<int>();
    sp.stem_choices = j.at("stem_channels").get<std::vector<int>>();
    if (j.contains("layer_channels")) {
      sp.layer_choices = j["layer_channels"].get<std::vector<std::vector<std::vector<int>>>>();
    } else {
      const auto per_stage = j.at("stage_channels").get<std::vector<std::vector<int>>>();
      sp = SearchSpace::uniform(sp.stem_choices, per_stage, sp.max_depth, sp.input_channels,
                                sp.num_classes, sp.voxel_size);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed search space JSON: ") + e.what());
  }
  require_valid(sp);
  if (sp.stages() != kStages) {
    throw ConfigError("search space must list " + std::to_string(kStages) + " stages");
  }
  return sp;
}

}  // namespace spvnas
