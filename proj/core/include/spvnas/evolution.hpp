#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "spvnas/arch_spec.hpp"
#include "spvnas/backbone.hpp"
#include "spvnas/search_space.hpp"

namespace spvnas {

struct SearchConfig {
  int population = 50;
  int generations = 20;
  int top_k = 10;
  double mutation_prob = 0.1;
  double macs_limit = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  // Draws allowed per population slot before the constraint is declared infeasible.
  std::size_t resample_budget = 10000;
};

// Throws ConfigError: odd population, top_k outside [1, population], ...
void require_valid(const SearchConfig& cfg);

using FitnessFn = std::function<double(const ArchSpec&)>;
using CostFn = std::function<double(const ArchSpec&)>;

struct GenerationRecord {
  int generation = 0;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  double best_macs = 0.0;
  ArchSpec best;
};

struct SearchResult {
  ArchSpec best;
  Genome best_genome;
  double best_fitness = 0.0;
  double best_macs = 0.0;
  std::vector<GenerationRecord> history;
  // Candidates drawn for evaluation (including repeats served from the cache)
  // and distinct fitness calls.
  std::size_t candidates = 0;
  std::size_t fitness_calls = 0;
  // Cost of every candidate that was evaluated.
  std::vector<double> evaluated_costs;
};

// Average-kernel-map cost model: sum over conv layers of mean entries x in x
// out, plus the point-branch and classifier terms.
double estimate_macs(const ArchSpec& spec, Family family, const KernelMapStats& stats);

// Generation 0: `population` constraint-satisfying uniform samples. Then per
// generation: the top_k distinct genomes breed population/2 mutations and
// population/2 crossovers (each rejection-resampled against the constraint);
// survivors and offspring are merged and truncated back to `population` by
// fitness. Throws InfeasibleError when a slot exhausts its resample budget.
SearchResult evolutionary_search(const SearchConfig& cfg, const SearchSpace& space,
                                 const FitnessFn& fitness, const CostFn& cost);

// Same budget as evolution (population x generations candidates), uniform
// feasible samples only.
SearchResult random_search(const SearchConfig& cfg, const SearchSpace& space, const FitnessFn& fitness,
                           const CostFn& cost);

// One NDJSON line: generation, best_macs, best_fitness, mean_fitness, best_arch.
std::string generation_json(const GenerationRecord& rec);

}  // namespace spvnas
