// ctmr: phantom data, preprocessing, training, translation, evaluation,
// image grids and loss plots.

#include <CLI11.hpp>

#include <iostream>

#include "ctmr/ctmr.hpp"

namespace {

using namespace ctmr;
using Scalar = float;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string config;
  bool dump_arch = false;
};

RunConfig base_config(const Globals &g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_config_file(g.config);
  if (g.seed_set) c.set_seed(g.seed);
  c.validate();
  return c;
}

/// "name=path" or a bare path named after its stem.
std::pair<std::string, fs::path> named_path(const std::string &arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) return {fs::path(arg).stem().string(), arg};
  require(eq > 0 && eq + 1 < arg.size(), "expected name=path, got '" + arg + "'");
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

std::string file_hash(const fs::path &p) {
  const auto bytes = read_file_bytes(p);
  return hex64(detail::fnv1a(bytes.data(), bytes.size()));
}

void write_text(const fs::path &p, const std::string &text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
  if (!os) throw IoError("write failed: " + p.string());
}

void dump_arch(const RunConfig &c) {
  const auto dim = static_cast<std::size_t>(c.preprocess.crop_dim);
  Generator<Scalar> g(c.generator, 0);
  Discriminator<Scalar> d(c.discriminator, 0);
  std::cout << format_summary("generator", g.summary(dim, dim)) << format_summary("discriminator", d.summary(dim, dim));
}

// ---- subcommands ----

struct PhantomArgs {
  std::size_t n = 200;
  int size = 256;
  double noise = 0.02;
  std::string out;
};

int cmd_phantom(const Globals &g, const PhantomArgs &a) {
  PhantomSpec spec;
  spec.image_size = a.size;
  spec.noise_sigma = a.noise;
  spec.seed = g.seed;
  const auto m = export_phantom_dataset(spec, a.n, a.out);
  std::cout << "wrote " << m.entries.size() << " CT and " << m.entries.size() << " MR phantoms to " << a.out << "\n";
  return 0;
}

struct DataArgs {
  std::string ct, mr, out;
};

/// Writes the deterministic evaluation view of every volume, in [0, 1].
int cmd_preprocess(const Globals &g, const DataArgs &a) {
  const RunConfig c = base_config(g);
  PreprocessConfig p = c.preprocess;
  p.augment = false;
  const auto extent = static_cast<std::size_t>(c.min_extent);
  std::size_t count = 0;
  for (const auto &[dir, m, sub] : {std::tuple{a.ct, Modality::CT, "ct"}, std::tuple{a.mr, Modality::MR, "mr"}}) {
    for (const auto &path : list_volumes(dir)) {
      const auto v = resample_slices(load_volume(path, m, extent), static_cast<std::size_t>(p.target_slices));
      const auto dim = static_cast<std::size_t>(p.crop_dim);
      VolumeRecord out = make_volume(dim, dim, v.slices, m, v.source_id);
      Rng unused(0);
      for (std::size_t s = 0; s < v.slices; ++s)
        out.set_slice(s, from_network_range(preprocess_slice(v.slice(s), p, unused).pixels));
      save_volume(out, fs::path(a.out) / sub / path.filename());
      ++count;
    }
  }
  std::cout << "preprocessed " << count << " volumes into " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string ct, mr, out, resume;
  long long max_steps = -1;
};

int cmd_train(const Globals &g, const TrainArgs &a) {
  RunConfig c = base_config(g);
  if (a.max_steps >= 0) c.train.max_steps = a.max_steps;
  std::unique_ptr<TrainState<Scalar>> st;
  if (!a.resume.empty()) {
    st = load_checkpoint<Scalar>(a.resume);
    for (const auto &w : checkpoint_compatibility(st->config, c)) std::cerr << "warning: " << w << "\n";
    // Schedule and logging settings may be extended on resume; the model,
    // data and loss settings stay as stored.
    st->config.train.epochs = c.train.epochs;
    st->config.train.max_steps = c.train.max_steps;
    st->config.train.checkpoint_every = c.train.checkpoint_every;
    st->config.train.log_every = c.train.log_every;
    st->config.train.prefetch_threads = c.train.prefetch_threads;
  } else {
    st = std::make_unique<TrainState<Scalar>>(c);
  }
  const auto loader = make_loader(a.ct, a.mr, st->config.preprocess, static_cast<std::size_t>(st->config.min_extent));
  const auto res = fit(*st, loader, a.out, &std::cout);
  std::cout << "trained to step " << st->step << " (" << res.log.size() << " steps this run); checkpoint "
            << res.final_checkpoint.string() << "\n";
  return 0;
}

struct TranslateArgs {
  std::string checkpoint, input, direction, out;
};

int cmd_translate(const Globals &, const TranslateArgs &a) {
  const Direction dir = parse_direction(a.direction);
  auto st = load_checkpoint<Scalar>(a.checkpoint);
  const Modality src = source_modality(dir);
  if (const auto declared = declared_modality(a.input); declared && *declared != src)
    std::cerr << "warning: " << a.input << " is declared " << to_string(*declared) << " but direction "
              << to_string(dir) << " expects " << to_string(src) << "\n";
  VolumeRecord in;
  try {
    in = load_volume(a.input, src, static_cast<std::size_t>(st->config.min_extent));
  } catch (const ValidationError &) {
    if (!declared_modality(a.input) || *declared_modality(a.input) == src) throw;
    in = load_volume(a.input, *declared_modality(a.input), static_cast<std::size_t>(st->config.min_extent));
    in.modality = src;
  }
  const auto out = translate_volume(st->bundle.generator_to(target_modality(dir)), in, target_modality(dir),
                                    st->config.preprocess);
  save_volume(out, a.out);
  write_provenance({file_hash(a.checkpoint), dir, fs::absolute(a.input).string(), fs::absolute(a.checkpoint).string(),
                    utc_timestamp(), st->step},
                   a.out);
  std::cout << "wrote " << out.slices << " slices to " << a.out << "\n";
  return 0;
}

struct EvaluateArgs {
  std::vector<std::string> models;
  std::string ct, mr, out;
};

int cmd_evaluate(const Globals &g, const EvaluateArgs &a) {
  const RunConfig c = base_config(g);
  const auto extent = static_cast<std::size_t>(c.min_extent);
  const auto ct = load_directory(a.ct, Modality::CT, extent), mr = load_directory(a.mr, Modality::MR, extent);
  std::vector<std::pair<std::string, fs::path>> models;
  for (const auto &m : a.models) models.push_back(named_path(m));
  const auto outcome = evaluate_checkpoints<Scalar>(models, ct, mr);
  for (const auto &f : outcome.failures) std::cerr << "error: model " << f.model << ": " << f.message << "\n";
  if (outcome.rows.empty()) return 3;
  const fs::path out(a.out);
  fs::create_directories(out);
  write_report_csv(outcome.rows, out / "report.csv");
  write_per_slice_csv(outcome.rows, out / "per_slice.csv");
  const std::string table = format_report_table(outcome.rows);
  write_text(out / "report.txt", table);
  std::cout << table;
  return outcome.failures.empty() ? 0 : 3;
}

struct GridArgs {
  std::string model_a, model_b, input, direction, out;
  std::size_t rows = 3, cell = 256;
};

int cmd_grid(const Globals &, const GridArgs &a) {
  const Direction dir = parse_direction(a.direction);
  std::unique_ptr<TrainState<Scalar>> sa, sb;
  for (const auto &[label, path, slot] : {std::tuple{"translated/recovered A", &a.model_a, &sa},
                                         std::tuple{"translated/recovered B", &a.model_b, &sb}}) {
    if (!fs::exists(*path)) throw ValidationError("grid column " + std::string(label) + ": checkpoint not found: " + *path);
    *slot = load_checkpoint<Scalar>(*path);
  }
  const RunConfig &c = sa->config;
  const Modality src = source_modality(dir);
  const auto vols = fs::is_directory(a.input)
                        ? load_directory(a.input, src, static_cast<std::size_t>(c.min_extent))
                        : std::vector<VolumeRecord>{load_volume(a.input, src, static_cast<std::size_t>(c.min_extent))};
  const auto slices = eval_slices(vols, c.preprocess);
  std::vector<Image> samples;
  for (std::size_t k : uniform_picks(slices.size(), a.rows)) samples.push_back(slices[k].pixels);
  GridSpec spec;
  spec.rows = a.rows;
  spec.cell_size = a.cell;
  const Modality tgt = target_modality(dir);
  const auto img = render_grid(spec, sa->bundle.generator_to(tgt), sa->bundle.generator_to(src),
                               sb->bundle.generator_to(tgt), sb->bundle.generator_to(src), samples);
  write_png(img, a.out);
  std::cout << "wrote " << img.width << "x" << img.height << " grid to " << a.out << "\n";
  return 0;
}

struct PlotArgs {
  std::vector<std::string> logs;
  std::string out;
};

int cmd_plot(const Globals &, const PlotArgs &a) {
  std::vector<NamedLog> logs;
  for (const auto &l : a.logs) {
    const auto [name, path] = named_path(l);
    logs.push_back({name, read_loss_log(path)});
  }
  const fs::path out(a.out);
  write_text(fs::path(out.string() + ".csv"), aligned_loss_csv(logs));
  write_png(plot_losses(logs), fs::path(out.string() + ".png"));
  std::cout << "wrote " << out.string() << ".csv and " << out.string() << ".png\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Unpaired CT/MR translation: data, training, translation and evaluation"};
  app.require_subcommand(0, 1);
  Globals g;
  app.add_option_function<std::uint64_t>(
         "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Seed for data, initialization and sampling")
      ->trigger_on_parse();
  app.add_option("--config", g.config, "Configuration file (key = value lines)");
  app.add_flag("--dump-arch", g.dump_arch, "Print layer shapes and parameter counts");

  PhantomArgs pa;
  auto *phantom = app.add_subcommand("phantom", "Write a synthetic CT/MR phantom dataset");
  phantom->add_option("--n", pa.n, "Number of phantom pairs");
  phantom->add_option("--size", pa.size, "Image size in pixels");
  phantom->add_option("--noise", pa.noise, "Gaussian noise sigma");
  phantom->add_option("--out", pa.out, "Output directory")->required();

  DataArgs da;
  auto *prep = app.add_subcommand("preprocess", "Write the evaluation view of every volume");
  prep->add_option("--ct", da.ct, "CT volume directory")->required();
  prep->add_option("--mr", da.mr, "MR volume directory")->required();
  prep->add_option("--out", da.out, "Output directory")->required();

  TrainArgs ta;
  auto *train = app.add_subcommand("train", "Train the translation model");
  train->add_option("--ct", ta.ct, "CT volume directory")->required();
  train->add_option("--mr", ta.mr, "MR volume directory")->required();
  train->add_option("--out", ta.out, "Run directory")->required();
  train->add_option("--resume", ta.resume, "Checkpoint to resume from");
  train->add_option("--max-steps", ta.max_steps, "Stop after this global step (overrides max_steps)");

  TranslateArgs tr;
  auto *translate = app.add_subcommand("translate", "Translate a volume with a trained model");
  translate->add_option("--checkpoint", tr.checkpoint, "Checkpoint file")->required();
  translate->add_option("--input", tr.input, "Input volume")->required();
  translate->add_option("--direction", tr.direction, "ct2mr or mr2ct")->required();
  translate->add_option("--out", tr.out, "Output volume (.nii, .nii.gz or .vol)")->required();

  EvaluateArgs ea;
  auto *evaluate = app.add_subcommand("evaluate", "Score checkpoints on test volumes");
  evaluate->add_option("--model", ea.models, "name=checkpoint, repeatable")->required();
  evaluate->add_option("--ct", ea.ct, "CT test directory")->required();
  evaluate->add_option("--mr", ea.mr, "MR test directory")->required();
  evaluate->add_option("--out", ea.out, "Report directory")->required();

  GridArgs ga;
  auto *grid = app.add_subcommand("grid", "Render a comparison grid of two models");
  grid->add_option("--model-a", ga.model_a, "First checkpoint")->required();
  grid->add_option("--model-b", ga.model_b, "Second checkpoint")->required();
  grid->add_option("--input", ga.input, "Source volume or directory")->required();
  grid->add_option("--direction", ga.direction, "ct2mr or mr2ct")->required();
  grid->add_option("--rows", ga.rows, "Number of samples");
  grid->add_option("--cell", ga.cell, "Cell size in pixels");
  grid->add_option("--out", ga.out, "Output PNG")->required();

  PlotArgs pl;
  auto *plot = app.add_subcommand("plot", "Overlay loss curves from training logs");
  plot->add_option("--log", pl.logs, "name=loss_log.csv, repeatable")->required();
  plot->add_option("--out", pl.out, "Output prefix (writes .csv and .png)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (g.dump_arch) dump_arch(base_config(g));
    if (*phantom) return cmd_phantom(g, pa);
    if (*prep) return cmd_preprocess(g, da);
    if (*train) return cmd_train(g, ta);
    if (*translate) return cmd_translate(g, tr);
    if (*evaluate) return cmd_evaluate(g, ea);
    if (*grid) return cmd_grid(g, ga);
    if (*plot) return cmd_plot(g, pl);
    if (!g.dump_arch) std::cout << app.help();
    return 0;
  } catch (const ValidationError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
