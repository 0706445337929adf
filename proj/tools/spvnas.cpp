// spvnas: data generation, training, supernet search, evaluation and profiling.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spvnas/backbone.hpp"
#include "spvnas/checkpoint.hpp"
#include "spvnas/dataset.hpp"
#include "spvnas/errors.hpp"
#include "spvnas/evolution.hpp"
#include "spvnas/scene.hpp"
#include "spvnas/search_space.hpp"
#include "spvnas/supernet.hpp"
#include "spvnas/training.hpp"

namespace {

using namespace spvnas;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

bool g_timestamps = true;

void log_line(const std::string& msg) {
  if (g_timestamps) {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", std::localtime(&t));
    std::cout << '[' << buf << "] ";
  }
  std::cout << msg << '\n' << std::flush;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spill(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f << text << '\n';
}

Family parse_family(const std::string& s) { return family_from_name(s); }

std::vector<PreparedScene> load_split(const Dataset& ds, const std::vector<std::string>& ids,
                                      std::size_t limit, double voxel) {
  std::vector<std::string> use = ids;
  if (limit && use.size() > limit) use.resize(limit);
  if (use.empty()) throw DataError("dataset split " + ds.root.string() + " is empty");
  return load_prepared(ds, use, voxel);
}

void print_iou(const IouResult& r) {
  std::printf("%-10s %8s\n", "class", "IoU");
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const std::string name = c < kSceneClasses ? class_name(static_cast<std::int32_t>(c)) : std::to_string(c);
    if (r.present[c]) std::printf("%-10s %8.4f\n", name.c_str(), r.per_class[c]);
    else std::printf("%-10s %8s\n", name.c_str(), "n/a");
  }
  std::printf("%-10s %8.4f\n", "mIoU", r.mean);
}

struct Options {
  // gen-data
  std::string config, out;
  std::size_t count = 10;
  double val_fraction = 0.2;
  // common
  std::string arch, data, calib, space, ckpt, weights, family = "spvcnn", log;
  std::uint64_t seed = 0;
  int workers = 1;
  int epochs = 2;
  double lr = 0.1;
  // supernet
  int phase1_epochs = 2, phase2_epochs = 2;
  double phase1_lr = 0.24, phase2_lr = 0.096;
  // search
  double macs_limit_g = 0.0;
  int population = 50, generations = 20, top_k = 10;
  double p_mut = 0.1;
  std::size_t calib_scenes = 8, val_scenes = 0, train_scenes = 0;
  // benchmark
  int repeats = 3;
  bool per_layer = false;
};

int cmd_gen_data(const Options& o) {
  SceneGenConfig cfg;
  if (!o.config.empty()) cfg = scene_config_from_json(slurp(o.config));
  const Dataset ds = generate_dataset(cfg, o.out, o.count, o.val_fraction);
  log_line("wrote " + std::to_string(ds.split.train.size()) + " train and " +
           std::to_string(ds.split.val.size()) + " val scenes to " + o.out);
  return 0;
}

TrainConfig train_config(const Options& o) {
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.learning_rate = o.lr;
  tc.workers = o.workers;
  tc.seed = o.seed;
  tc.on_epoch = [](const EpochSummary& s) {
    log_line("phase " + std::to_string(s.phase) + " epoch " + std::to_string(s.epoch) + " lr " +
             fmt("%.5f", s.learning_rate) + " loss " + fmt("%.6f", s.mean_loss));
  };
  return tc;
}

int cmd_train(const Options& o) {
  const ArchSpec arch = arch_from_json(slurp(o.arch));
  const Dataset ds = open_dataset(o.data);
  const auto train = load_split(ds, ds.split.train, o.train_scenes, arch.voxel_size);
  Network net(arch, parse_family(o.family));
  net.init(o.seed);
  train_network(net, arch, train, train_config(o));
  if (!ds.split.val.empty()) {
    const auto val = load_split(ds, ds.split.val, o.val_scenes, arch.voxel_size);
    const IouResult r = evaluate(net, arch, val);
    log_line("val mIoU " + fmt("%.4f", r.mean));
  }
  if (!o.out.empty()) {
    write_checkpoint(o.out, network_checkpoint(net));
    log_line("saved " + o.out);
  }
  return 0;
}

int cmd_train_supernet(const Options& o) {
  const SearchSpace space = space_from_json(slurp(o.space));
  const Dataset ds = open_dataset(o.data);
  const auto train = load_split(ds, ds.split.train, o.train_scenes, space.voxel_size);
  Network net = build_supernet(space, parse_family(o.family));
  net.init(o.seed);
  SupernetSchedule sched;
  sched.phase1_epochs = o.phase1_epochs;
  sched.phase2_epochs = o.phase2_epochs;
  sched.phase1_lr = o.phase1_lr;
  sched.phase2_lr = o.phase2_lr;
  train_supernet(net, space, train, sched, train_config(o));
  nlohmann::json extra{{"space", nlohmann::json::parse(to_json(space))}};
  write_checkpoint(o.out, network_checkpoint(net, extra.dump()));
  log_line("saved supernet " + o.out);
  return 0;
}

int cmd_search(const Options& o) {
  const SearchSpace space = space_from_json(slurp(o.space));
  Checkpoint ck = read_checkpoint(o.ckpt);
  Network supernet = network_from_checkpoint(ck);
  if (!fits_within(max_arch(space), supernet.allocation())) {
    throw ConfigError("search space is larger than the supernet in " + o.ckpt);
  }
  const Dataset ds = open_dataset(o.data);
  const auto calib = load_split(ds, ds.split.train, o.calib_scenes, space.voxel_size);
  const auto val = load_split(ds, ds.split.val.empty() ? ds.split.train : ds.split.val, o.val_scenes,
                              space.voxel_size);
  std::vector<const CoordinatePipeline*> pipes;
  for (const auto& s : calib) pipes.push_back(&s.pipeline);
  const KernelMapStats stats = estimate_kernel_map_sizes(pipes);

  SearchConfig cfg;
  cfg.population = o.population;
  cfg.generations = o.generations;
  cfg.top_k = o.top_k;
  cfg.mutation_prob = o.p_mut;
  cfg.macs_limit = o.macs_limit_g * 1e9;
  cfg.seed = o.seed;
  const Family fam = supernet.family();
  const SearchResult r = evolutionary_search(
      cfg, space,
      [&](const ArchSpec& a) { return subnet_fitness(supernet, a, calib, val); },
      [&](const ArchSpec& a) { return estimate_macs(a, fam, stats); });

  std::ofstream ndjson;
  if (!o.log.empty()) {
    ndjson.open(o.log, std::ios::trunc);
    if (!ndjson) throw DataError("cannot write " + o.log);
  }
  for (const auto& g : r.history) {
    const std::string line = generation_json(g);
    if (ndjson.is_open()) ndjson << line << '\n';
    else std::cout << line << '\n';
  }
  log_line("best fitness " + fmt("%.6f", r.best_fitness) + " at " + fmt("%.0f", r.best_macs) + " MACs");
  if (!o.out.empty()) spill(o.out, to_json(r.best));
  return 0;
}

// Weights for `arch`: a standalone checkpoint loads directly (leading blocks);
// a supernet is sliced and its BN statistics recalibrated on `calib`.
Network network_for(const ArchSpec& arch, const Checkpoint& ck, std::span<const PreparedScene> calib) {
  Network src = network_from_checkpoint(ck);
  if (src.elastic()) {
    Network sub = extract_subnet(src, arch);
    recalibrate_bn(sub, arch, calib);
    return sub;
  }
  Network net(arch, src.family());
  TensorList dst = net.tensors();
  load_tensors(ck, dst);
  return net;
}

int cmd_eval(const Options& o) {
  const ArchSpec arch = arch_from_json(slurp(o.arch));
  const Dataset ds = open_dataset(o.data);
  const Checkpoint ck = read_checkpoint(o.weights);
  const auto calib = load_split(ds, ds.split.train, o.calib_scenes, arch.voxel_size);
  Network net = network_for(arch, ck, calib);
  const auto val = load_split(ds, ds.split.val.empty() ? ds.split.train : ds.split.val, o.val_scenes,
                              arch.voxel_size);
  print_iou(evaluate(net, arch, val));
  return 0;
}

int cmd_finetune(const Options& o) {
  const ArchSpec arch = arch_from_json(slurp(o.arch));
  const Dataset ds = open_dataset(o.data);
  const Checkpoint ck = read_checkpoint(o.ckpt);
  const auto train = load_split(ds, ds.split.train, o.train_scenes, arch.voxel_size);
  Network net = network_for(arch, ck, std::span(train).subspan(0, std::min(train.size(), o.calib_scenes)));
  train_network(net, arch, train, train_config(o));
  if (!ds.split.val.empty()) {
    const auto val = load_split(ds, ds.split.val, o.val_scenes, arch.voxel_size);
    log_line("val mIoU " + fmt("%.4f", evaluate(net, arch, val).mean));
  }
  write_checkpoint(o.out, network_checkpoint(net));
  log_line("saved " + o.out);
  return 0;
}

template <class F>
double time_ms(int repeats, F&& f) {
  double best = 1e300;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = Clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  return best;
}

int cmd_benchmark(const Options& o) {
  const ArchSpec arch = arch_from_json(slurp(o.arch));
  const Dataset ds = open_dataset(o.data);
  const std::vector<std::string>& ids = ds.split.val.empty() ? ds.split.train : ds.split.val;
  if (ids.empty()) throw DataError("dataset has no scenes");
  const Scene scene = load_scene(ds, ids.front());
  const PointTensor pts = scene.point_tensor();
  const int reps = std::max(1, o.repeats);

  std::pair<std::vector<Coord>, VoxelizeMap> vox;
  const double t_vox = time_ms(reps, [&] {
    vox = voxelize_coords(pts, arch.voxel_size);
    volatile auto keep = voxelize_features(pts.features, vox.second).rows;
    (void)keep;
  });
  const CoordHashMap hash = CoordHashMap::build(vox.first);
  KernelMap km;
  const double t_km = time_ms(reps, [&] { km = build_kernel_map_stride1(vox.first, hash, 1); });
  CoordinatePipeline pipe;
  const double t_pipe = time_ms(reps, [&] {
    pipe = build_coordinate_pipeline(pts.positions, pts.batch, arch.voxel_size, kBackboneTrilinearLevels);
  });
  SparseConvLayer conv(static_cast<std::size_t>(arch.stem_channels),
                       static_cast<std::size_t>(arch.stem_channels));
  Rng rng(o.seed);
  conv.init(rng);
  FeatureMatrix x(vox.first.size(), static_cast<std::size_t>(arch.stem_channels), 1.0f);
  const double t_conv = time_ms(reps, [&] { volatile auto k = sparse_conv_forward(conv, x, km).rows; (void)k; });
  const double t_devox = time_ms(reps, [&] { volatile auto k = devoxelize(pipe.trilinear[0], x).rows; (void)k; });
  Network net(arch, parse_family(o.family));
  net.init(o.seed);
  net.set_mode(nn::BnMode::kInference);
  MacCounter mc;
  const double t_fwd = time_ms(reps, [&] {
    mc = {};
    net.forward(pipe, pts.features, &mc);
  });

  std::printf("scene %s: %zu points, %zu voxels\n", scene.id.c_str(), pts.size(), vox.first.size());
  std::printf("%-28s %12s %16s\n", "op", "ms", "MACs");
  std::printf("%-28s %12.3f %16s\n", "voxelize", t_vox, "-");
  std::printf("%-28s %12.3f %16s\n", "kernel map (stride 1)", t_km, "-");
  std::printf("%-28s %12.3f %16s\n", "coordinate pipeline", t_pipe, "-");
  std::printf("%-28s %12.3f %16.0f\n", ("conv3 " + std::to_string(arch.stem_channels) + "->" +
                                        std::to_string(arch.stem_channels)).c_str(),
              t_conv, double(km.total_entries()) * arch.stem_channels * arch.stem_channels);
  std::printf("%-28s %12.3f %16s\n", "devoxelize", t_devox, "-");
  std::printf("%-28s %12.3f %16llu\n", "network forward", t_fwd,
              static_cast<unsigned long long>(mc.total()));
  return 0;
}

int cmd_estimate_macs(const Options& o) {
  const ArchSpec arch = arch_from_json(slurp(o.arch));
  const Dataset ds = open_dataset(o.calib);
  std::vector<std::string> ids = ds.split.train;
  ids.insert(ids.end(), ds.split.val.begin(), ds.split.val.end());
  const auto scenes = load_split(ds, ids, o.calib_scenes, arch.voxel_size);
  std::vector<const CoordinatePipeline*> pipes;
  for (const auto& s : scenes) pipes.push_back(&s.pipeline);
  const KernelMapStats stats = estimate_kernel_map_sizes(pipes);
  const MacsReport r = count_macs(arch, parse_family(o.family), stats);
  if (o.per_layer) {
    std::printf("%-22s %-6s %14s %6s %6s %16s\n", "layer", "kind", "entries", "in", "out", "MACs");
    for (const auto& l : r.layers) {
      std::printf("%-22s %-6s %14.2f %6d %6d %16.0f\n", l.name.c_str(), l.kind.c_str(), l.entries,
                  l.in_channels, l.out_channels, l.macs);
    }
  }
  std::printf("calibration scenes %zu\n", stats.scenes);
  std::printf("conv MACs %.0f\npoint MACs %.0f\nhead MACs %.0f\ntotal MACs %.0f\n", r.conv, r.point,
              r.head, r.total());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPVConv / 3D-NAS toolkit"};
  app.require_subcommand(1);
  Options o;
  bool no_ts = false;
  app.add_flag("--no-timestamps", no_ts, "Omit timestamps from log lines");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", o.config, "Scene generator config (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--count", o.count, "Number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--val-fraction", o.val_fraction, "Fraction of scenes held out for validation");

  auto add_train_opts = [&](CLI::App* c) {
    c->add_option("--workers", o.workers, "Parallel workers")->check(CLI::PositiveNumber);
    c->add_option("--seed", o.seed, "Random seed");
    c->add_option("--train-scenes", o.train_scenes, "Use at most this many training scenes (0 = all)");
  };

  auto* train = app.add_subcommand("train", "Train a fixed architecture");
  train->add_option("--arch", o.arch, "Architecture (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--family", o.family, "spvcnn or voxel_only");
  train->add_option("--epochs", o.epochs, "Epochs")->check(CLI::PositiveNumber);
  train->add_option("--lr", o.lr, "Base learning rate");
  train->add_option("--out", o.out, "Write the trained weights here");
  train->add_option("--val-scenes", o.val_scenes, "Evaluate on at most this many val scenes");
  add_train_opts(train);

  auto* sup = app.add_subcommand("train-supernet", "Train a weight-sharing supernet");
  sup->add_option("--space", o.space, "Search space (JSON)")->required()->check(CLI::ExistingFile);
  sup->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  sup->add_option("--out", o.out, "Checkpoint path")->required();
  sup->add_option("--family", o.family, "spvcnn or voxel_only");
  sup->add_option("--phase1-epochs", o.phase1_epochs, "Channel-only epochs");
  sup->add_option("--phase2-epochs", o.phase2_epochs, "Elastic-depth epochs");
  sup->add_option("--phase1-lr", o.phase1_lr, "Phase 1 base learning rate");
  sup->add_option("--phase2-lr", o.phase2_lr, "Phase 2 base learning rate");
  add_train_opts(sup);

  auto* search = app.add_subcommand("search", "MACs-constrained evolutionary search");
  search->add_option("--ckpt", o.ckpt, "Supernet checkpoint")->required()->check(CLI::ExistingFile);
  search->add_option("--space", o.space, "Search space (JSON)")->required()->check(CLI::ExistingFile);
  search->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  search->add_option("--macs-limit", o.macs_limit_g, "MACs budget in GMACs")->required();
  search->add_option("--out", o.out, "Write the best architecture here");
  search->add_option("--log", o.log, "Generation log (NDJSON); stdout when omitted");
  search->add_option("--population", o.population, "Population size");
  search->add_option("--generations", o.generations, "Generations");
  search->add_option("--top-k", o.top_k, "Parents per generation");
  search->add_option("--p-mut", o.p_mut, "Per-parameter mutation probability");
  search->add_option("--calib-scenes", o.calib_scenes, "Scenes for BN recalibration and MACs stats");
  search->add_option("--val-scenes", o.val_scenes, "Fitness scenes (0 = whole val split)");
  search->add_option("--seed", o.seed, "Random seed");

  auto* ev = app.add_subcommand("eval", "Per-class IoU of a trained network");
  ev->add_option("--arch", o.arch, "Architecture (JSON)")->required()->check(CLI::ExistingFile);
  ev->add_option("--weights", o.weights, "Checkpoint (standalone or supernet)")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--calib-scenes", o.calib_scenes, "BN recalibration scenes when slicing a supernet");
  ev->add_option("--val-scenes", o.val_scenes, "Evaluate on at most this many scenes");

  auto* ft = app.add_subcommand("finetune", "Extract a subnet from a supernet and finetune it");
  ft->add_option("--ckpt", o.ckpt, "Supernet checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--arch", o.arch, "Architecture (JSON)")->required()->check(CLI::ExistingFile);
  ft->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ft->add_option("--out", o.out, "Checkpoint path")->required();
  ft->add_option("--epochs", o.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  ft->add_option("--lr", o.lr, "Base learning rate");
  ft->add_option("--calib-scenes", o.calib_scenes, "BN recalibration scenes");
  ft->add_option("--val-scenes", o.val_scenes, "Evaluate on at most this many scenes");
  add_train_opts(ft);

  auto* bench = app.add_subcommand("benchmark", "Per-op wall time and MACs");
  bench->add_option("--arch", o.arch, "Architecture (JSON)")->required()->check(CLI::ExistingFile);
  bench->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  bench->add_option("--family", o.family, "spvcnn or voxel_only");
  bench->add_option("--repeats", o.repeats, "Timing repeats (best is reported)");
  bench->add_option("--seed", o.seed, "Weight seed");

  auto* est = app.add_subcommand("estimate-macs", "MACs from averaged kernel-map sizes");
  est->add_option("--arch", o.arch, "Architecture (JSON)")->required()->check(CLI::ExistingFile);
  est->add_option("--calib", o.calib, "Calibration dataset directory")->required()->check(CLI::ExistingDirectory);
  est->add_option("--family", o.family, "spvcnn or voxel_only");
  est->add_option("--calib-scenes", o.calib_scenes, "Use at most this many scenes (0 = all)");
  est->add_flag("--per-layer", o.per_layer, "Print the per-layer breakdown");

  o.calib_scenes = 8;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }
  g_timestamps = !no_ts;

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train(o);
    if (*sup) return cmd_train_supernet(o);
    if (*search) return cmd_search(o);
    if (*ev) return cmd_eval(o);
    if (*ft) return cmd_finetune(o);
    if (*bench) return cmd_benchmark(o);
    if (*est) {
      if (est->count("--calib-scenes") == 0) o.calib_scenes = 0;
      return cmd_estimate_macs(o);
    }
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
