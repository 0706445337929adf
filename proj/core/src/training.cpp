#include "spvnas/training.hpp"

#include <cmath>
#include <numeric>
#include <thread>

#include "spvnas/errors.hpp"

namespace spvnas {

namespace {

struct Phase {
  int epochs = 0;
  double lr = 0.0;
  // Chooses the architecture worker `w` trains at this step.
  std::function<ArchSpec(int epoch_in_phase, Rng& rng)> sample;
  int id = 1;  // reported in EpochSummary::phase
};

struct StepResult {
  double loss = 0.0;
  ArchSpec spec;
};

// Shared loop: each step every worker draws an architecture from its own
// derived stream, computes gradients on its own scene, gradients are averaged
// in worker order, replica 0 takes one SGD step and the others copy it.
TrainLog run_phases(Network& net, std::span<const PreparedScene> scenes, const std::vector<Phase>& phases,
                    const TrainConfig& cfg) {
  if (scenes.empty()) throw DataError("training needs at least one scene");
  if (cfg.workers < 1) throw ConfigError("training needs at least one worker");
  const auto workers = static_cast<std::size_t>(cfg.workers);
  std::vector<Network> replicas(workers, net);
  std::vector<std::vector<nn::ParamRef>> params;
  std::vector<TensorList> all;
  for (auto& r : replicas) {
    r.set_mode(nn::BnMode::kTraining);
    params.push_back(r.parameters());
    all.push_back(r.tensors());
  }
  nn::SgdState sgd(cfg.learning_rate, cfg.momentum);

  const std::size_t pass = (scenes.size() + workers - 1) / workers;
  const std::size_t steps_per_epoch = cfg.steps_per_epoch ? cfg.steps_per_epoch : pass;
  TrainLog log;
  std::size_t step = 0;
  int global_epoch = 0;
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (const Phase& phase : phases) {
    const std::size_t phase_steps = steps_per_epoch * static_cast<std::size_t>(phase.epochs);
    std::size_t phase_step = 0;
    for (int e = 0; e < phase.epochs; ++e, ++global_epoch) {
      Rng shuffle = Rng::derive(cfg.seed, 0x5417F1Eull, static_cast<std::uint64_t>(global_epoch));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
      EpochSummary summary{phase.id, global_epoch, 0.0,
                           nn::cosine_lr(phase.lr, phase_step, phase_steps)};
      double epoch_loss = 0.0;
      for (std::size_t t = 0; t < steps_per_epoch; ++t, ++step, ++phase_step) {
        std::vector<StepResult> results(workers);
        auto work = [&](std::size_t w) {
          Rng rng = Rng::derive(cfg.seed, step, w);
          results[w].spec = phase.sample(e, rng);
          const PreparedScene& s = scenes[order[(t * workers + w) % scenes.size()]];
          Network& r = replicas[w];
          r.zero_grad();
          const FeatureMatrix logits = r.forward(s.pipeline, s.features, results[w].spec);
          auto ce = nn::cross_entropy(logits, s.labels);
          results[w].loss = ce.loss;
          if (std::isfinite(ce.loss)) r.backward(ce.grad_logits);
        };
        if (workers == 1) {
          work(0);
        } else {
          std::vector<std::thread> pool;
          for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
          for (auto& th : pool) th.join();
        }
        double loss = 0.0;
        for (std::size_t w = 0; w < workers; ++w) {
          if (!std::isfinite(results[w].loss)) {
            throw NumericError("non-finite loss at step " + std::to_string(step) + " for architecture " +
                               to_json(results[w].spec));
          }
          loss += results[w].loss;
          if (cfg.capture_samples) {
            SampleRecord rec{global_epoch, step, static_cast<int>(w), results[w].spec.stage_depths};
            log.samples.push_back(rec);
          }
        }
        loss /= double(workers);
        if (workers > 1) {
          const float inv = 1.0f / static_cast<float>(workers);
          for (std::size_t p = 0; p < params[0].size(); ++p) {
            auto g0 = params[0][p].grad;
            for (std::size_t w = 1; w < workers; ++w) {
              const auto gw = params[w][p].grad;
              for (std::size_t j = 0; j < g0.size(); ++j) g0[j] += gw[j];
            }
            for (auto& v : g0) v *= inv;
          }
        }
        sgd.learning_rate = nn::cosine_lr(phase.lr, phase_step, phase_steps);
        try {
          nn::sgd_step(sgd, params[0]);
        } catch (const NumericError& err) {
          throw NumericError(std::string(err.what()) + " (architecture " + to_json(results[0].spec) + ")");
        }
        for (std::size_t w = 1; w < workers; ++w) {
          for (std::size_t i = 0; i < all[0].size(); ++i) {
            std::copy(all[0][i].value, all[0][i].value + all[0][i].numel(), all[w][i].value);
          }
        }
        log.step_loss.push_back(loss);
        epoch_loss += loss;
      }
      summary.mean_loss = epoch_loss / double(steps_per_epoch);
      log.epochs.push_back(summary);
      if (cfg.on_epoch) cfg.on_epoch(summary);
    }
  }
  net = std::move(replicas[0]);
  return log;
}

}  // namespace

TrainLog train_network(Network& net, const ArchSpec& spec, std::span<const PreparedScene> scenes,
                       const TrainConfig& cfg) {
  require_valid(spec);
  Phase p{cfg.epochs, cfg.learning_rate, [&spec](int, Rng&) { return spec; }};
  return run_phases(net, scenes, {p}, cfg);
}

TrainLog train_supernet(Network& supernet, const SearchSpace& space,
                        std::span<const PreparedScene> scenes, const SupernetSchedule& schedule,
                        const TrainConfig& cfg) {
  require_valid(space);
  if (schedule.phase1_epochs < 0 || schedule.phase2_epochs < 0) {
    throw ConfigError("supernet schedule epochs must be >= 0");
  }
  const int m = space.max_depth;
  Phase channels{schedule.phase1_epochs, schedule.phase1_lr, [&space, m](int, Rng& rng) {
                   return decode(space, sample_uniform(space, rng, {m, m}));
                 }, 1};
  Phase elastic{schedule.phase2_epochs, schedule.phase2_lr,
                [&space, m, total = schedule.phase2_epochs](int e, Rng& rng) {
                  return decode(space, sample_uniform(space, rng, depth_range_for_epoch(e, total, m)));
                }, 2};
  std::vector<Phase> phases;
  if (channels.epochs > 0) phases.push_back(channels);
  if (elastic.epochs > 0) phases.push_back(elastic);
  return run_phases(supernet, scenes, phases, cfg);
}

}  // namespace spvnas
