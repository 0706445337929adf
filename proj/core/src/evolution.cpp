#include "spvnas/evolution.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

#include "spvnas/errors.hpp"

namespace spvnas {

void require_valid(const SearchConfig& c) {
  if (c.population < 2 || c.population % 2 != 0) {
    throw ConfigError("search: population must be even and >= 2");
  }
  if (c.top_k < 1 || c.top_k > c.population) {
    throw ConfigError("search: top_k must be in [1, population]");
  }
  if (c.generations < 1) throw ConfigError("search: needs at least one generation");
  if (c.mutation_prob < 0.0 || c.mutation_prob > 1.0) {
    throw ConfigError("search: mutation probability must be in [0, 1]");
  }
  if (c.resample_budget < 1) throw ConfigError("search: resample budget must be >= 1");
}

double estimate_macs(const ArchSpec& spec, Family family, const KernelMapStats& stats) {
  return count_macs(spec, family, stats).total();
}

namespace {

struct Member {
  Genome genome;
  double fitness = 0.0;
  double cost = 0.0;
};

class Evaluator {
 public:
  Evaluator(const SearchSpace& space, const FitnessFn& f, const CostFn& c, SearchResult& r)
      : space_(space), fitness_(f), cost_(c), result_(r) {}

  double cost(const Genome& g) {
    auto it = cost_cache_.find(g);
    if (it != cost_cache_.end()) return it->second;
    const double v = cost_(decode(space_, g));
    cost_cache_.emplace(g, v);
    return v;
  }

  Member evaluate(const Genome& g) {
    ++result_.candidates;
    const double c = cost(g);
    result_.evaluated_costs.push_back(c);
    auto it = fit_cache_.find(g);
    if (it == fit_cache_.end()) {
      ++result_.fitness_calls;
      it = fit_cache_.emplace(g, fitness_(decode(space_, g))).first;
    }
    return {g, it->second, c};
  }

 private:
  const SearchSpace& space_;
  const FitnessFn& fitness_;
  const CostFn& cost_;
  SearchResult& result_;
  std::map<Genome, double> fit_cache_;
  std::map<Genome, double> cost_cache_;
};

template <class Draw>
Genome feasible(const SearchConfig& cfg, Evaluator& ev, Draw draw) {
  for (std::size_t attempt = 0; attempt < cfg.resample_budget; ++attempt) {
    Genome g = draw();
    if (ev.cost(g) <= cfg.macs_limit) return g;
  }
  throw InfeasibleError("no architecture within " + std::to_string(cfg.macs_limit) + " MACs after " +
                        std::to_string(cfg.resample_budget) + " draws");
}

void record(SearchResult& r, int gen, const std::vector<Member>& pop, const SearchSpace& space) {
  // Population is sorted best-first.
  GenerationRecord rec;
  rec.generation = gen;
  rec.best_fitness = pop.front().fitness;
  rec.best_macs = pop.front().cost;
  rec.best = decode(space, pop.front().genome);
  double sum = 0.0;
  for (const auto& m : pop) sum += m.fitness;
  rec.mean_fitness = sum / double(pop.size());
  r.history.push_back(rec);
}

void sort_best_first(std::vector<Member>& pop) {
  std::stable_sort(pop.begin(), pop.end(),
                   [](const Member& a, const Member& b) { return a.fitness > b.fitness; });
}

void finish(SearchResult& r, const Member& best, const SearchSpace& space) {
  r.best_genome = best.genome;
  r.best = decode(space, best.genome);
  r.best_fitness = best.fitness;
  r.best_macs = best.cost;
}

}  // namespace

SearchResult evolutionary_search(const SearchConfig& cfg, const SearchSpace& space,
                                 const FitnessFn& fitness, const CostFn& cost) {
  require_valid(cfg);
  require_valid(space);
  SearchResult result;
  Evaluator ev(space, fitness, cost, result);
  Rng rng = Rng::derive(cfg.seed, 0xE70ull);
  const std::size_t n = static_cast<std::size_t>(cfg.population);

  std::vector<Member> pop;
  for (std::size_t i = 0; i < n; ++i) {
    pop.push_back(ev.evaluate(feasible(cfg, ev, [&] { return sample_uniform(space, rng); })));
  }
  sort_best_first(pop);
  record(result, 0, pop, space);

  for (int gen = 1; gen < cfg.generations; ++gen) {
    // Parents: the top_k distinct genomes.
    std::vector<Member> parents;
    for (const auto& m : pop) {
      if (parents.size() == static_cast<std::size_t>(cfg.top_k)) break;
      const bool dup = std::any_of(parents.begin(), parents.end(),
                                   [&](const Member& p) { return p.genome == m.genome; });
      if (!dup) parents.push_back(m);
    }
    std::vector<Member> next = parents;
    for (std::size_t i = 0; i < n / 2; ++i) {
      Genome child = feasible(cfg, ev, [&] {
        Genome g = parents[rng.index(parents.size())].genome;
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (rng.bernoulli(cfg.mutation_prob)) g[k] = static_cast<int>(rng.index(space.cardinality(k)));
        }
        return g;
      });
      next.push_back(ev.evaluate(child));
    }
    for (std::size_t i = 0; i < n / 2; ++i) {
      Genome child = feasible(cfg, ev, [&] {
        const Genome& a = parents[rng.index(parents.size())].genome;
        const Genome& b = parents[rng.index(parents.size())].genome;
        Genome g(a.size());
        for (std::size_t k = 0; k < g.size(); ++k) g[k] = rng.bernoulli(0.5) ? a[k] : b[k];
        return g;
      });
      next.push_back(ev.evaluate(child));
    }
    sort_best_first(next);
    next.resize(n);
    pop = std::move(next);
    record(result, gen, pop, space);
  }
  finish(result, pop.front(), space);
  return result;
}

SearchResult random_search(const SearchConfig& cfg, const SearchSpace& space, const FitnessFn& fitness,
                           const CostFn& cost) {
  require_valid(cfg);
  require_valid(space);
  SearchResult result;
  Evaluator ev(space, fitness, cost, result);
  Rng rng = Rng::derive(cfg.seed, 0xE70ull);
  const std::size_t n = static_cast<std::size_t>(cfg.population);
  Member best;
  bool have = false;
  for (int gen = 0; gen < cfg.generations; ++gen) {
    std::vector<Member> batch;
    for (std::size_t i = 0; i < n; ++i) {
      batch.push_back(ev.evaluate(feasible(cfg, ev, [&] { return sample_uniform(space, rng); })));
    }
    sort_best_first(batch);
    if (!have || batch.front().fitness > best.fitness) {
      best = batch.front();
      have = true;
    }
    // History tracks the running best.
    std::vector<Member> view = batch;
    view.front() = best;
    record(result, gen, view, space);
  }
  finish(result, best, space);
  return result;
}

std::string generation_json(const GenerationRecord& rec) {
  nlohmann::json j;
  j["generation"] = rec.generation;
  j["best_macs"] = rec.best_macs;
  j["best_fitness"] = rec.best_fitness;
  j["mean_fitness"] = rec.mean_fitness;
  j["best_arch"] = nlohmann::json::parse(to_json(rec.best));
  return j.dump();
}

}  // namespace spvnas
