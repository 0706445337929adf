#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spvnas/arch_spec.hpp"
#include "spvnas/rng.hpp"

namespace spvnas {

// One choice index per architectural parameter, laid out as
//   [stem, stage 0 layers 0..m, stage 0 depth - 1, stage 1 layers ..., ...].
using Genome = std::vector<int>;

struct DepthRange {
  int lo = 1;
  int hi = 1;
  bool operator==(const DepthRange&) const = default;
};

// Channel choices per layer and a shared depth bound m for n stages. An
// eight-stage space decodes to ArchSpec; other stage counts are usable for
// sampling only.
struct SearchSpace {
  int input_channels = 4;
  int num_classes = 4;
  double voxel_size = 0.2;
  int max_depth = 1;
  std::vector<int> stem_choices;
  // layer_choices[s][b] for b in [0, max_depth].
  std::vector<std::vector<std::vector<int>>> layer_choices;

  int stages() const { return static_cast<int>(layer_choices.size()); }
  std::size_t gene_count() const;
  // Number of alternatives for gene i.
  std::size_t cardinality(std::size_t gene) const;
  std::size_t depth_gene(int stage) const;
  // Product of cardinalities (double: it overflows quickly).
  double size() const;

  // Every layer offers the same list within a stage.
  static SearchSpace uniform(std::vector<int> stem, std::vector<std::vector<int>> stage_choices,
                             int max_depth, int input_channels = 4, int num_classes = 4,
                             double voxel_size = 0.2);

  bool operator==(const SearchSpace&) const = default;
};

// Throws ConfigError on empty choice lists, m < 1, or widths off the grid.
void require_valid(const SearchSpace& space);

ArchSpec decode(const SearchSpace& space, const Genome& g);
// Throws ConfigError when the spec is not a point of the space.
Genome encode(const SearchSpace& space, const ArchSpec& spec);
// Largest choice everywhere and depth m: the supernet allocation.
ArchSpec max_arch(const SearchSpace& space);
int total_depth(const SearchSpace& space, const Genome& g);

// Channels i.i.d. uniform over each list, then each stage depth i.i.d.
// uniform over `range`. Throws ConfigError unless 1 <= lo <= hi <= m.
Genome sample_uniform(const SearchSpace& space, Rng& rng, DepthRange range);
Genome sample_uniform(const SearchSpace& space, Rng& rng);

// Progressive depth shrinking: `epoch` is 0-based; the schedule is split into
// m equal contiguous segments, and an epoch straddling a boundary belongs to
// the later one. Segment k (1-based) allows depths [m - k + 1, m].
int depth_segment(int epoch, int total_epochs, int m);
DepthRange depth_range_for_epoch(int epoch, int total_epochs, int m);

std::string to_json(const SearchSpace& space);
SearchSpace space_from_json(const std::string& text);

}  // namespace spvnas
