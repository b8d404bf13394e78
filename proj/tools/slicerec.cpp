// slicerec command-line tool.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "slicerec/bench.hpp"
#include "slicerec/checkpoint.hpp"
#include "slicerec/csv_import.hpp"
#include "slicerec/evaluation.hpp"
#include "slicerec/png.hpp"
#include "slicerec/run_config.hpp"
#include "slicerec/synthgen.hpp"
#include "slicerec/training.hpp"
#include "slicerec/volume_file.hpp"

namespace fs = std::filesystem;
using namespace slicerec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
};

struct Context {
  RunConfig config;
  std::string out;
  std::size_t threads = 1;
  std::optional<std::uint64_t> seed_flag;

  std::uint64_t seed() const { return seed_flag.value_or(config.seed); }
  std::string path(const std::string& name) const { return (fs::path(out) / name).string(); }
};

Context make_context(const Globals& g) {
  Context c;
  if (!g.config_path.empty()) c.config = load_run_config(g.config_path);
  c.seed_flag = g.seed;
  c.threads = g.threads.value_or(c.config.threads);
  if (c.threads == 0) throw UsageError("--threads must be >= 1");
  c.out = g.out.value_or(c.config.out);
  fs::create_directories(c.out);
  return c;
}

Dims3 parse_dims(const std::vector<std::size_t>& v, const std::string& what) {
  if (v.size() != 3) throw UsageError(what + " needs exactly 3 sizes");
  return {v[0], v[1], v[2]};
}

GrainMap ids_of(const VolumeFile& f) {
  return f.ids ? *f.ids : segment_grains(f.orientations, 0.0);
}

void write_size_report(const std::string& path, const GrainMap& ids) {
  const auto rows = size_distribution_report(ids);
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path);
  os.precision(17);
  os << "probability,normal_quantile,log_normalized_size\n";
  for (const auto& r : rows) os << r.probability << ',' << r.normal_quantile << ',' << r.log_normalized << '\n';
}

void generate_one(const Context& ctx, const std::string& name, const GenSpec& spec) {
  const GeneratedVolume gv = generate(spec);
  save_volume(ctx.path(name + ".ebsdvol"), {gv.orientations, gv.ids, extract_boundaries(gv.ids)});
  const std::size_t grains = grain_count(gv.ids);
  std::cout << name << " shape=" << dims_str(spec.shape) << " grains=" << grains;
  try {
    write_size_report(ctx.path(name + "_sizes.csv"), gv.ids);
    std::cout << " r2=" << probability_plot_r2(size_distribution_report(gv.ids));
  } catch (const StatisticsError&) {
    std::cout << " (too few grains for a size report)";
  }
  std::cout << '\n';
}

// ---------------------------------------------------------------- commands

struct GenArgs {
  bool preset = false;
  std::size_t validation_per_setting = 4;
  std::string name = "volume";
  std::vector<std::size_t> shape;
  std::optional<double> grain_size, twins;
};

int cmd_gen(const Context& ctx, const GenArgs& a) {
  if (a.preset) {
    for (const auto& p : paper_preset(ctx.seed(), a.validation_per_setting)) generate_one(ctx, p.name, p.spec);
    return kExitOk;
  }
  GenSpec spec = ctx.config.gen;
  if (ctx.seed_flag) spec.seed = *ctx.seed_flag;
  if (!a.shape.empty()) spec.shape = parse_dims(a.shape, "--shape");
  if (a.grain_size) spec.mean_grain_size = *a.grain_size;
  if (a.twins) spec.mean_twins_per_grain = *a.twins;
  spec.validate();
  generate_one(ctx, a.name, spec);
  return kExitOk;
}

struct TrainArgs {
  std::vector<std::string> volumes;
  std::optional<std::size_t> steps, warmup;
  std::optional<double> lr;
  std::size_t log_every = 100;
  std::string name = "model";
};

int cmd_train(const Context& ctx, const TrainArgs& a) {
  TrainConfig tc = ctx.config.train;
  if (ctx.seed_flag) tc.seed = *ctx.seed_flag;
  if (a.steps) tc.total_steps = *a.steps;
  if (a.warmup) tc.warmup_steps = *a.warmup;
  if (a.lr) tc.lr_peak = *a.lr;
  tc.validate();
  std::vector<OrientationVolume> values;
  std::vector<GrainMap> ids;
  for (const auto& path : a.volumes) {
    VolumeFile f = load_volume(path);
    ids.push_back(ids_of(f));
    values.push_back(std::move(f.orientations));
  }
  const TrainingPool pool = make_pool(values, ids);
  const ModelState init = init_model(ctx.config.model, tc.seed);
  std::cerr << "training " << init.parameter_count() << " parameters for " << tc.total_steps << " steps\n";
  TrainHooks hooks;
  double window = 0;
  std::size_t in_window = 0;
  hooks.on_step = [&](const LossRecord& r) {
    window += r.loss;
    ++in_window;
    if (a.log_every > 0 && (r.step + 1) % a.log_every == 0) {
      std::cerr << "step " << r.step + 1 << " lr " << r.lr << " mean loss " << window / in_window << '\n';
      window = 0;
      in_window = 0;
    }
  };
  hooks.on_checkpoint = [&](std::size_t step, const ModelState& m) {
    save_checkpoint(ctx.path(a.name + "_step" + std::to_string(step) + ".slrckpt"), m, pool.stats);
  };
  const TrainResult result = train(pool, init, tc, ctx.config.augment, hooks);
  save_checkpoint(ctx.path(a.name + ".slrckpt"), result.model, pool.stats);
  write_loss_csv(ctx.path(a.name + "_loss.csv"), result.trace);
  std::cout << "wrote " << ctx.path(a.name + ".slrckpt") << " and " << ctx.path(a.name + "_loss.csv") << '\n';
  return kExitOk;
}

struct RecoverArgs {
  std::string checkpoint, volume, method = "transformer";
  std::size_t slice = 0;
};

int cmd_recover(const Context& ctx, const RecoverArgs& a) {
  const Method method = parse_method(a.method);
  std::optional<Checkpoint> ck;
  if (method == Method::Transformer) {
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required for the transformer method");
    ck = load_checkpoint(a.checkpoint);
  }
  const VolumeFile f = load_volume(a.volume);
  const GrainMap ids = ids_of(f);
  const IdSlice got =
      recover_volume_slice(f.orientations, ids, a.slice, method, ck ? &*ck : nullptr, mix_seed(ctx.seed(), a.slice));
  const std::string stem = "recovered_slice_" + std::to_string(a.slice);
  {
    std::ofstream os(ctx.path(stem + ".csv"));
    if (!os) throw Error("cannot write " + ctx.path(stem + ".csv"));
    for (std::size_t r = 0; r < got.rows(); ++r) {
      for (std::size_t c = 0; c < got.cols(); ++c) os << (c ? "," : "") << got(r, c);
      os << '\n';
    }
  }
  write_png(ctx.path(stem + ".png"),
            render_slice(ids_to_cubochoric(got, observed_dictionary(f.orientations, ids, a.slice))));
  const IdSlice truth = slice_dim2(ids, a.slice);
  std::cout << "slice " << a.slice << " method " << method_name(method)
            << " agreement with stored slice: " << overall_accuracy(got, truth) << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> volumes;
  std::vector<std::string> methods;
  std::vector<std::size_t> segment;
};

int cmd_eval(const Context& ctx, const EvalArgs& a) {
  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) ck = load_checkpoint(a.checkpoint);
  std::vector<Method> methods;
  if (!a.methods.empty()) {
    for (const auto& m : a.methods) methods.push_back(parse_method(m));
  } else {
    for (Method m : ctx.config.eval.methods)
      if (m != Method::Transformer || ck) methods.push_back(m);
  }
  if (methods.empty()) throw UsageError("no methods to evaluate");
  Dims3 segment = ctx.config.eval.segment_shape;
  if (ck) segment = ck->model.config.crop_shape;
  if (!a.segment.empty()) segment = parse_dims(a.segment, "--segment");
  std::vector<EvalSample> samples;
  for (std::size_t v = 0; v < a.volumes.size(); ++v) {
    const VolumeFile f = load_volume(a.volumes[v]);
    auto part = partition(f.orientations, ids_of(f), segment, mix_seed(ctx.seed(), v), v);
    std::move(part.begin(), part.end(), std::back_inserter(samples));
  }
  const EvalReport report = run_comparison(samples, methods, ck ? &*ck : nullptr, ctx.seed(), ctx.threads);
  {
    std::ofstream os(ctx.path("eval_records.csv"));
    write_records_csv(os, report);
    std::ofstream ss(ctx.path("eval_summary.csv"));
    write_summary_csv(ss, report);
    std::ofstream js(ctx.path("eval_report.json"));
    js << report_json(report).dump(2) << '\n';
    if (!os || !ss || !js) throw Error("failed writing reports under " + ctx.out);
  }
  std::cout << samples.size() << " samples\n";
  std::cout << "method            overall(mean+-std)   boundary(mean+-std)\n";
  for (const auto& s : report.per_method) {
    std::printf("%-16s  %.4f +- %.4f      %.4f +- %.4f\n", method_name(s.method), s.overall.mean, s.overall.stddev,
                s.boundary.mean, s.boundary.stddev);
  }
  return kExitOk;
}

struct BenchArgs {
  std::vector<std::size_t> sides{4, 6, 8, 10, 12};
  std::size_t dim = 16, heads = 2, repeats = 3;
};

int cmd_bench(const Context& ctx, const BenchArgs& a) {
  const auto rows = bench_attention(a.sides, a.dim, a.heads, a.repeats, ctx.seed());
  write_bench_csv(std::cout, rows);
  std::ofstream os(ctx.path("bench_attention.csv"));
  write_bench_csv(os, rows);
  return kExitOk;
}

struct ImportArgs {
  std::string input, units = "deg", name;
  double tolerance_deg = 5.0;
};

int cmd_import(const Context& ctx, const ImportArgs& a) {
  const OrientationVolume v = import_csv_file(a.input, parse_units(a.units));
  if (a.tolerance_deg < 0) throw UsageError("--tolerance must be >= 0");
  const GrainMap ids = segment_grains(v, a.tolerance_deg * kPi / 180.0);
  const std::string name = a.name.empty() ? fs::path(a.input).stem().string() : a.name;
  save_volume(ctx.path(name + ".ebsdvol"), {v, ids, extract_boundaries(ids)});
  std::cout << name << " shape=" << dims_str(v.dims()) << " grains=" << grain_count(ids) << '\n';
  return kExitOk;
}

struct ExportArgs {
  std::string volume, name;
  std::size_t slice = 0;
  int axis = 1;
};

int cmd_export(const Context& ctx, const ExportArgs& a) {
  const VolumeFile f = load_volume(a.volume);
  const std::string name =
      a.name.empty() ? fs::path(a.volume).stem().string() + "_axis" + std::to_string(a.axis) + "_" +
                           std::to_string(a.slice)
                     : a.name;
  write_png(ctx.path(name + ".png"), render_slice(volume_slice(f.orientations, a.axis, a.slice)));
  std::cout << "wrote " << ctx.path(name + ".png") << '\n';
  return kExitOk;
}

struct ParamArgs {
  std::optional<std::size_t> layers, heads, embed_dim, ff_dim;
};

int cmd_param_count(const Context& ctx, const ParamArgs& a) {
  ModelConfig c = ctx.config.model;
  if (a.layers) c.layers = *a.layers;
  if (a.heads) c.heads = *a.heads;
  if (a.embed_dim) c.embed_dim = *a.embed_dim;
  if (a.ff_dim) c.ff_dim = *a.ff_dim;
  c.validate();
  std::cout << param_count(c) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Keep freed tensor buffers in the heap instead of returning them with munmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Missing-slice recovery for EBSD volumes"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--threads", g.threads, "Evaluation worker count");
  app.add_option("--out", g.out, "Output directory");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic volumes");
  gen_cmd->add_flag("--preset-paper", gen.preset, "Emit the 9 training and the validation volumes");
  gen_cmd->add_option("--validation-per-setting", gen.validation_per_setting, "Validation volumes per setting");
  gen_cmd->add_option("--name", gen.name, "Output name");
  gen_cmd->add_option("--shape", gen.shape, "N1 N2 N3")->expected(3)->delimiter(',');
  gen_cmd->add_option("--grain-size", gen.grain_size, "Mean grain size");
  gen_cmd->add_option("--twins", gen.twins, "Mean twins per grain");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the transformer on volume files");
  train_cmd->add_option("--volumes", tr.volumes, "Training volume files")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--steps", tr.steps, "Total steps");
  train_cmd->add_option("--warmup", tr.warmup, "Warmup steps");
  train_cmd->add_option("--lr", tr.lr, "Peak learning rate");
  train_cmd->add_option("--log-every", tr.log_every, "Progress interval (0 = quiet)");
  train_cmd->add_option("--name", tr.name, "Checkpoint name");

  RecoverArgs rc;
  auto* recover_cmd = app.add_subcommand("recover", "Recover one slice of a volume");
  recover_cmd->add_option("--checkpoint", rc.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  recover_cmd->add_option("--volume", rc.volume, "Volume file")->required()->check(CLI::ExistingFile);
  recover_cmd->add_option("--slice", rc.slice, "Slice index along dim 2")->required();
  recover_cmd->add_option("--method", rc.method, "transformer, knn_vote, copy_previous or copy_next");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Compare methods on partitioned volumes");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_option("--volumes", ev.volumes, "Validation volume files")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--methods", ev.methods, "Methods to compare")->delimiter(',');
  eval_cmd->add_option("--segment", ev.segment, "Segment shape N1,N2,N3")->expected(3)->delimiter(',');

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench-attention", "Time full vs axial attention");
  bench_cmd->add_option("--sides", bn.sides, "Cube side lengths")->delimiter(',');
  bench_cmd->add_option("--dim", bn.dim, "Embedding width");
  bench_cmd->add_option("--heads", bn.heads, "Attention heads");
  bench_cmd->add_option("--repeats", bn.repeats, "Timing repeats (best is kept)");

  ImportArgs im;
  auto* import_cmd = app.add_subcommand("import-csv", "Convert an x,y,z,phi1,Phi,phi2 CSV to a volume file");
  import_cmd->add_option("--input", im.input, "CSV file")->required()->check(CLI::ExistingFile);
  import_cmd->add_option("--units", im.units, "Euler angle units: deg or rad");
  import_cmd->add_option("--tolerance", im.tolerance_deg, "Grain segmentation tolerance in degrees");
  import_cmd->add_option("--name", im.name, "Output name");

  ExportArgs ex;
  auto* export_cmd = app.add_subcommand("export-png", "Render a slice as RGB");
  export_cmd->add_option("--volume", ex.volume, "Volume file")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--slice", ex.slice, "Slice index")->required();
  export_cmd->add_option("--axis", ex.axis, "Slicing axis, 0-based (default 1)");
  export_cmd->add_option("--name", ex.name, "Output name");

  ParamArgs pc;
  auto* param_cmd = app.add_subcommand("param-count", "Print the model parameter count");
  param_cmd->add_option("--layers", pc.layers);
  param_cmd->add_option("--heads", pc.heads);
  param_cmd->add_option("--embed-dim", pc.embed_dim);
  param_cmd->add_option("--ff-dim", pc.ff_dim);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const Context ctx = make_context(g);
    if (*gen_cmd) return cmd_gen(ctx, gen);
    if (*train_cmd) return cmd_train(ctx, tr);
    if (*recover_cmd) return cmd_recover(ctx, rc);
    if (*eval_cmd) return cmd_eval(ctx, ev);
    if (*bench_cmd) return cmd_bench(ctx, bn);
    if (*import_cmd) return cmd_import(ctx, im);
    if (*export_cmd) return cmd_export(ctx, ex);
    if (*param_cmd) return cmd_param_count(ctx, pc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "invalid parameter: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
