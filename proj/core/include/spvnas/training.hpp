#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spvnas/backbone.hpp"
#include "spvnas/dataset.hpp"
#include "spvnas/search_space.hpp"

namespace spvnas {

// When `capture_samples` is set, every (step, worker) draw is recorded.
struct SampleRecord {
  int epoch = 0;  // global, 0-based
  std::size_t step = 0;
  int worker = 0;
  std::array<int, kStages> depths{};
};

struct EpochSummary {
  int phase = 1;  // 1: fixed or channel-only, 2: elastic depth
  int epoch = 0;  // global, 0-based
  double mean_loss = 0.0;
  double learning_rate = 0.0;  // at the start of the epoch
};

struct TrainLog {
  std::vector<double> step_loss;  // mean over workers
  std::vector<EpochSummary> epochs;
  std::vector<SampleRecord> samples;
};

using EpochCallback = std::function<void(const EpochSummary&)>;

struct TrainConfig {
  int epochs = 10;
  double learning_rate = 0.1;
  double momentum = 0.9;
  int workers = 1;
  std::uint64_t seed = 0;
  // Cap on optimizer steps per epoch (0 = one pass over the scenes).
  std::size_t steps_per_epoch = 0;
  bool capture_samples = false;
  EpochCallback on_epoch;
};

// Plain training of one fixed architecture (also used for finetuning).
TrainLog train_network(Network& net, const ArchSpec& spec, std::span<const PreparedScene> scenes,
                       const TrainConfig& cfg);

// Phase 1 samples channels only at maximal depth, phase 2 adds elastic depth
// with progressive shrinking. Each phase restarts the cosine schedule.
struct SupernetSchedule {
  int phase1_epochs = 15;
  int phase2_epochs = 15;
  double phase1_lr = 0.24;
  double phase2_lr = 0.096;
};

TrainLog train_supernet(Network& supernet, const SearchSpace& space,
                        std::span<const PreparedScene> scenes, const SupernetSchedule& schedule,
                        const TrainConfig& cfg);

}  // namespace spvnas
