// Command-line entry point: dataset creation, training, evaluation,
// generation and the HTTP service.

#include <fcntl.h>
#include <unistd.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "layoutsynth/checkpoint.hpp"
#include "layoutsynth/config.hpp"
#include "layoutsynth/dataset.hpp"
#include "layoutsynth/evaluation.hpp"
#include "layoutsynth/image_io.hpp"
#include "layoutsynth/layout_io.hpp"
#include "layoutsynth/service.hpp"
#include "layoutsynth/trainer.hpp"

namespace fs = std::filesystem;
using namespace layoutsynth;

namespace {

enum ExitCode : int {
  kOk = 0,
  kOtherError = 1,
  kConfigFailure = 2,
  kDataFailure = 3,
  kCheckpointFailure = 4,
  kNumericFailure = 5,
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::optional<std::uint64_t> steps;
  std::optional<double> semi_fraction;
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string layout;
  std::string contact_sheet;
  bool semi = false;
  bool dump_config = false;
  bool oracle = false;
  bool alpha_zero = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.steps) c.train.steps = *o.steps;
  if (o.semi_fraction) c.semi.supervised_fraction = *o.semi_fraction;
  validate(c);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

// Exclusive-writer lock on a run directory, released on destruction.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw std::runtime_error("run directory " + dir.string() +
                               " is locked by another trainer (remove " + path_.string() +
                               " if stale)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // The lock is held either way; the pid is informational.
    }
  }
  ~RunLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

int cmd_dataset_make(const Options& o) {
  const RunConfig c = resolve_config(o);
  const std::string dir = o.out.empty() ? c.data_dir : o.out;
  const Dataset ds = make_dataset(c.data, c.seed);
  save_dataset(ds, dir);
  std::cerr << "wrote " << ds.samples.size() << " samples to " << dir << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  RunConfig c = resolve_config(o);
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.dump_config) {
    std::cout << to_json(c);
    return kOk;
  }
  const Dataset ds = load_dataset(c.data_dir);
  auto examples = make_examples(ds, c, o.semi ? TrainMode::kSemi : TrainMode::kFully);
  const fs::path run = c.out_dir;
  fs::create_directories(run);
  RunLock lock(run);
  Trainer trainer(c, std::move(examples));
  if (!o.checkpoint.empty()) trainer.restore(load_checkpoint_file(o.checkpoint));
  write_text(run / "config.json", to_json(c));

  std::ofstream metrics(run / "metrics.ndjson",
                        o.checkpoint.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write " + (run / "metrics.ndjson").string());
  while (trainer.steps_done() < c.train.steps) {
    const StepMetrics m = trainer.step();
    if (m.step % c.train.log_every == 0 || m.step == c.train.steps) {
      const std::string line = m.to_json();
      std::cout << line << "\n" << std::flush;
      metrics << line << "\n" << std::flush;
    }
    if (c.train.checkpoint_every && m.step % c.train.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06llu.isla",
                    static_cast<unsigned long long>(m.step));
      save_checkpoint_file((run / name).string(), trainer.checkpoint());
    }
  }
  save_checkpoint_file((run / "final.isla").string(), trainer.checkpoint());
  std::cerr << "trained " << trainer.steps_done() << " steps; checkpoint "
            << (run / "final.isla").string() << "\n";
  return kOk;
}

int cmd_eval(const Options& o) {
  EvalReport report;
  RunConfig c;
  std::optional<Generator<float>> gen;
  if (!o.checkpoint.empty()) {
    gen.emplace(load_generator(load_checkpoint_file(o.checkpoint), &c));
    if (!o.config.empty()) c.data_dir = load_run_config(o.config).data_dir;
    if (o.seed) c.seed = *o.seed;
  } else if (o.oracle) {
    c = resolve_config(o);
  } else {
    throw ConfigError("eval needs --checkpoint (or --oracle)");
  }
  const Dataset ds = load_dataset(c.data_dir);
  if (ds.resolution != c.model.resolution) {
    throw DataError("dataset resolution " + std::to_string(ds.resolution) +
                    " differs from the model's " + std::to_string(c.model.resolution));
  }
  const std::uint64_t seed = split_seed(c.seed, 0xe7a1);
  report.config_json = to_json(c);
  if (o.oracle) {
    report.model = "oracle";
    report.iou = mean_iou_report(oracle_mask_model(), ds, seed, c.model.d_img, c.model.d_obj);
  } else {
    report.model = "generator";
    report.iou =
        mean_iou_report(generator_mask_model(*gen), ds, seed, c.model.d_img, c.model.d_obj);
    report.reconstruction_l1 =
        reconstruction_l1(generator_image_model(*gen), ds, seed, c.model.d_img, c.model.d_obj);
    std::vector<Layout> layouts;
    for (const auto& s : ds.samples) {
      if (layouts.size() == 8) break;
      layouts.push_back(s.layout);
    }
    report.diversity_layouts = layouts.size();
    report.diversity_styles = 4;
    report.diversity = diversity_score(generator_image_model(*gen), layouts, 4, seed,
                                       c.model.d_img, c.model.d_obj, FeatureExtractor<float>());
    for (const auto& s : ds.samples) {
      if (s.layout.boxes.empty()) continue;
      for (std::size_t i = 0; i < s.layout.boxes.size(); ++i) {
        report.locality.push_back(
            locality_probe(*gen, s.layout, i, split_seed(seed, s.id), split_seed(seed, ~s.id)));
      }
      break;
    }
    if (!o.contact_sheet.empty()) {
      std::vector<ContactRow> rows;
      for (std::size_t i = 0; i < std::min<std::size_t>(8, ds.samples.size()); ++i) {
        const Sample& s = ds.samples[i];
        const Layout l = with_background(s.layout);
        const StyleCodes st =
            sample_styles(l, c.model.d_img, c.model.d_obj, split_seed(seed, s.id));
        NoGradGuard guard;
        const auto out = gen->forward(std::span<const Layout>(&l, 1),
                                      std::span<const StyleCodes>(&st, 1));
        rows.push_back({s.layout, out.label_images[0], tensor_to_rgb(out.images, 0), s.image});
      }
      write_png(o.contact_sheet, contact_sheet(rows, c.model.resolution));
    }
  }
  const std::string json = report_json(report);
  if (o.out.empty()) {
    std::cout << json;
  } else {
    write_text(o.out, json);
  }
  return kOk;
}

int cmd_generate(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("generate needs --checkpoint");
  if (o.layout.empty()) throw ConfigError("generate needs --layout");
  RunConfig c;
  const Generator<float> gen = load_generator(load_checkpoint_file(o.checkpoint), &c);
  const LayoutDocument doc = load_layout_file(o.layout);
  const std::size_t r = c.model.resolution;
  if (doc.layout.height != r || doc.layout.width != r) {
    throw DataError("layout lattice differs from the model resolution " + std::to_string(r));
  }
  if (doc.categories.name != c.categories) {
    throw DataError("layout uses category set \"" + doc.categories.name +
                    "\", model was trained on \"" + c.categories + "\"");
  }
  const Layout layout = with_background(doc.layout);
  StyleSeeds requested = doc.style.value_or(StyleSeeds{c.seed, {}});
  if (o.seed) requested = StyleSeeds{*o.seed, {}};
  const StyleSeeds seeds = effective_seeds(layout, requested);
  const StyleCodes styles =
      sample_styles(layout, c.model.d_img, c.model.d_obj, seeds.seed, seeds.per_object_seeds);
  GeneratorOptions options;
  options.alpha_zero = o.alpha_zero;
  GeneratorOutput<float> out;
  {
    NoGradGuard guard;
    out = gen.forward(std::span<const Layout>(&layout, 1),
                      std::span<const StyleCodes>(&styles, 1), options);
  }
  const fs::path dir = o.out.empty() ? fs::path("generated") : fs::path(o.out);
  fs::create_directories(dir);
  write_png((dir / "image.png").string(), tensor_to_rgb(out.images, 0));
  write_png((dir / "label_map.png").string(), label_map_to_rgb(out.label_images[0], r, r));
  for (std::size_t k = 0; k < layout.boxes.size(); ++k) {
    const auto d = out.masks[0].data().subspan(k * r * r, r * r);
    const Tensor<float> plane(Shape{r, r}, std::vector<float>(d.begin(), d.end()));
    char name[32];
    std::snprintf(name, sizeof name, "mask_%02zu.png", k);
    write_png((dir / name).string(), mask_to_gray(plane));
  }
  const nlohmann::ordered_json s = {{"seed", seeds.seed},
                                    {"per_object_seeds", seeds.per_object_seeds}};
  write_text(dir / "seeds.json", s.dump(2) + "\n");
  std::cerr << "wrote " << dir.string() << "\n";
  return kOk;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("serve needs --checkpoint");
  RunConfig c;
  Generator<float> gen = load_generator(load_checkpoint_file(o.checkpoint), &c);
  GeneratorOptions options;
  options.alpha_zero = o.alpha_zero;
  const SynthesisService service(std::move(gen), builtin_category_set(c.categories), options);
  HttpServer server(service);
  const int port = server.bind(o.host, o.port);
  if (port < 0) throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(o.port));
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving on http://" << o.host << ":" << port << "\n";
  server.listen();
  g_server = nullptr;
  return kOk;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const LayoutParseError& e) {
    std::cerr << "layout error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const ImageIoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kCheckpointFailure;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOtherError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layout-to-image synthesis with instance-aware mask normalization"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&o](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Run configuration (JSON)");
    cmd->add_option("--seed", o.seed, "Override the run seed");
    cmd->add_option("--out", o.out, "Output path");
  };

  auto* dataset = app.add_subcommand("dataset", "Synthetic dataset tools");
  dataset->require_subcommand(1);
  auto* make = dataset->add_subcommand("make", "Render the shapes dataset to disk");
  common(make);

  auto* train = app.add_subcommand("train", "Train a model; metrics go to stdout as NDJSON");
  common(train);
  train->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");
  train->add_option("--steps", o.steps, "Total number of steps");
  train->add_option("--semi-fraction", o.semi_fraction, "Supervised fraction for --semi");
  train->add_flag("--semi", o.semi, "Train on a supervised/detected split");
  train->add_flag("--dump-config", o.dump_config, "Print the effective configuration and exit");

  auto* eval = app.add_subcommand("eval", "Write the evaluation report");
  common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Trained checkpoint");
  eval->add_flag("--oracle", o.oracle, "Score ground-truth masks instead of a model");
  eval->add_option("--contact-sheet", o.contact_sheet, "Also write a PNG contact sheet");

  auto* generate = app.add_subcommand("generate", "Synthesize one layout");
  common(generate);
  generate->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  generate->add_option("--layout", o.layout, "Layout document (JSON)")->required();
  generate->add_flag("--alpha-zero", o.alpha_zero, "Use shape masks only");

  auto* serve = app.add_subcommand("serve", "Run the HTTP synthesis service");
  serve->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  serve->add_option("--port", o.port, "Port (0 picks a free one)");
  serve->add_option("--host", o.host, "Bind address");
  serve->add_flag("--alpha-zero", o.alpha_zero, "Use shape masks only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  if (make->parsed()) return guarded([&] { return cmd_dataset_make(o); });
  if (train->parsed()) return guarded([&] { return cmd_train(o); });
  if (eval->parsed()) return guarded([&] { return cmd_eval(o); });
  if (generate->parsed()) return guarded([&] { return cmd_generate(o); });
  if (serve->parsed()) return guarded([&] { return cmd_serve(o); });
  return kOtherError;
}
