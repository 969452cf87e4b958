// lostnet command-line tool. Run `lostnet <verb> --help` for per-verb options.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lostnet/bench.hpp"
#include "lostnet/dataset.hpp"
#include "lostnet/service.hpp"
#include "lostnet/settings.hpp"
#include "lostnet/train.hpp"

namespace fs = std::filesystem;
using namespace lostnet;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key=value configuration file");
  cmd->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("--seed", c.seed, "seed for initialization, splits and shuffling");
}

Settings load_settings(const Common& c) {
  Config cfg = c.config.empty() ? Config{} : Config::load(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  return settings_from(cfg);
}

WeightStore<float> read_weights(const std::string& path, const NetworkSpec& spec) {
  if (path.empty()) throw std::runtime_error("no weights file given (--weights or 'weights=' in the config)");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights file " + path);
  return load_weights<float>(in, spec);
}

void write_weights(const std::string& path, const WeightStore<float>& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  save_weights(w, out);
}

Manifest read_data(const std::string& path) {
  const fs::path p(path);
  return read_manifest(fs::is_directory(p) ? p / "manifest.txt" : p);
}

void print_report(const Evaluation& ev, const std::vector<std::string>& classes) {
  const auto& r = ev.report;
  std::printf("accuracy\t%.6f\n", r.accuracy);
  if (r.loss) std::printf("loss\t%.6f\n", *r.loss);
  if (r.ap) std::printf("ap\t%.6f\n", *r.ap);
  if (r.macro_recall) std::printf("macro_recall\t%.6f\n", *r.macro_recall);
  if (r.macro_precision) std::printf("macro_precision\t%.6f\n", *r.macro_precision);
  std::printf("class\taccuracy\trecall\tprecision\tauc\n");
  auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("undefined"); };
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    std::printf("%s\t%.6f\t%s\t%s\t%s\n", classes[c].c_str(), m.accuracy, opt(m.recall).c_str(),
                opt(m.precision).c_str(), opt(r.roc[c].auc).c_str());
  }
}

std::vector<std::uint8_t> read_bytes(const std::string& path) { return read_file_bytes(path); }

Classifier make_classifier(const Settings& s) {
  const auto spec = s.network();
  return Classifier(spec, read_weights(s.weights, spec), s.classes, s.input_resolution, s.norm);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lostnet: lost-and-found image classification and retrieval"};
  app.require_subcommand(1);

  Common common;
  std::string data, out, weights_opt, history, registry_opt, category, description, location, init_weights_path;
  std::vector<std::string> images;
  bool all_data = false;
  std::size_t per_class = 8, image_size = 64, iterations = 10, warmup = 1, top_k = 0;
  std::optional<int> port;
  std::vector<std::size_t> resolutions{96, 160, 224};

  auto* synth = app.add_subcommand("synth", "write the seeded synthetic 10-family corpus");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--per-class", per_class, "images per family");
  synth->add_option("--image-size", image_size, "image side in pixels");

  auto* train_cmd = app.add_subcommand("train", "two-phase freeze/unfreeze training");
  train_cmd->add_option("--data", data, "corpus directory or manifest file")->required();
  train_cmd->add_option("--out", out, "where to write the trained weights")->required();
  train_cmd->add_option("--init", init_weights_path, "start from these weights instead of a seeded init");
  train_cmd->add_option("--history", history, "write the per-epoch history (TSV) here");
  train_cmd->add_flag("--all", all_data, "train on every entry instead of the 7:3 split");

  auto* eval_cmd = app.add_subcommand("eval", "metrics on the validation split");
  eval_cmd->add_option("--data", data, "corpus directory or manifest file")->required();
  eval_cmd->add_flag("--all", all_data, "evaluate every entry instead of the validation split");

  auto* classify_cmd = app.add_subcommand("classify", "predict the category of images");
  classify_cmd->add_option("images", images, "image files")->required();

  auto* hash_cmd = app.add_subcommand("hash", "perceptual hash of images");
  hash_cmd->add_option("images", images, "image files")->required();

  auto* compare_cmd = app.add_subcommand("compare", "Hamming distance between two images' hashes");
  compare_cmd->add_option("images", images, "two image files")->required()->expected(2);

  auto* register_cmd = app.add_subcommand("register", "add a found item to the registry");
  register_cmd->add_option("images", images, "image file")->required()->expected(1);
  register_cmd->add_option("--category", category, "item category")->required();
  register_cmd->add_option("--description", description, "free text");
  register_cmd->add_option("--location", location, "where it was found");

  auto* search_cmd = app.add_subcommand("search", "classify an image and rank registry items");
  search_cmd->add_option("images", images, "query image")->required()->expected(1);
  search_cmd->add_option("--top-k", top_k, "number of matches");

  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");
  serve_cmd->add_option("--port", port, "listen port (default LOSTNET_PORT or 8080)");

  auto* bench_cmd = app.add_subcommand("bench", "single-thread inference latency");
  bench_cmd->add_option("--iterations", iterations, "timed passes per resolution")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--warmup", warmup, "untimed passes per resolution");
  bench_cmd->add_option("--resolutions", resolutions, "input sides to time")->delimiter(',');

  auto* count_cmd = app.add_subcommand("count", "parameter and FLOP counts");

  for (auto* cmd : {synth, train_cmd, eval_cmd, classify_cmd, hash_cmd, compare_cmd, register_cmd, search_cmd, serve_cmd,
                    bench_cmd, count_cmd}) {
    add_common(cmd, common);
  }
  for (auto* cmd : {eval_cmd, classify_cmd, search_cmd, serve_cmd, bench_cmd}) {
    cmd->add_option("--weights", weights_opt, "weights file (LNW1)");
  }
  for (auto* cmd : {register_cmd, search_cmd, serve_cmd}) {
    cmd->add_option("--registry", registry_opt, "registry directory");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    Settings s = load_settings(common);
    if (!weights_opt.empty()) s.weights = weights_opt;
    if (!registry_opt.empty()) s.registry_dir = registry_opt;
    if (top_k) s.top_k = top_k;
    if (port) s.port = *port;

    if (*synth) {
      const auto m = write_synthetic_corpus(out, per_class, s.seed, image_size);
      std::printf("wrote %zu images to %s\n", m.entries.size(), out.c_str());
    } else if (*train_cmd) {
      const auto spec = s.network();
      const auto manifest = read_data(data);
      if (manifest.classes != s.classes) throw std::runtime_error("corpus classes differ from the configured classes");
      const auto [train_m, val_m] = all_data ? std::pair{manifest, Manifest{}} : split_dataset(manifest, s.seed);
      const auto train_set = load_dataset(train_m, s.input_resolution, s.norm);
      std::optional<TensorDataset> val;
      if (!val_m.entries.empty()) val = load_dataset(val_m, s.input_resolution, s.norm);
      WeightStore<float> w;
      if (init_weights_path.empty()) {
        w = init_weights<float>(spec, s.seed);
        calibrate_batchnorm(spec, w, train_set, s.calibration_samples);
      } else {
        w = read_weights(init_weights_path, spec);
      }
      std::ofstream hist;
      if (!history.empty()) hist.open(history);
      const auto result = train(spec, w, train_set, val ? &*val : nullptr, s.train,
                                [&](const EpochRecord& r, const WeightStore<float>&) {
                                  const auto line = format_history_line(r);
                                  std::printf("%s\n", line.c_str());
                                  std::fflush(stdout);
                                  if (hist) hist << line << '\n';
                                });
      write_weights(out, result.weights);
      std::printf("train_accuracy\t%.6f\n", accuracy_of(spec, result.weights, train_set));
      if (val) std::printf("val_accuracy\t%.6f\n", accuracy_of(spec, result.weights, *val));
    } else if (*eval_cmd) {
      const auto spec = s.network();
      const auto w = read_weights(s.weights, spec);
      const auto manifest = read_data(data);
      const auto subset = all_data ? manifest : split_dataset(manifest, s.seed).second;
      print_report(evaluate(spec, w, load_dataset(subset, s.input_resolution, s.norm)), s.classes);
    } else if (*classify_cmd) {
      const auto clf = make_classifier(s);
      for (const auto& path : images) {
        const auto c = clf.classify(read_bytes(path));
        std::printf("%s\t%s\t%.6f\n", path.c_str(), c.name.c_str(), c.confidence);
      }
    } else if (*hash_cmd) {
      for (const auto& path : images) {
        std::printf("%s\t%s\n", path.c_str(), phash_compute(std::span<const std::uint8_t>(read_bytes(path))).hex().c_str());
      }
    } else if (*compare_cmd) {
      const auto a = phash_compute(std::span<const std::uint8_t>(read_bytes(images[0])));
      const auto b = phash_compute(std::span<const std::uint8_t>(read_bytes(images[1])));
      std::printf("%s\t%s\t%d\n", a.hex().c_str(), b.hex().c_str(), hamming(a, b));
    } else if (*register_cmd) {
      Registry reg(s.registry_dir, s.classes);
      std::cout << item_json(reg.register_item(read_bytes(images[0]), category, description, location)).dump(2) << '\n';
    } else if (*search_cmd) {
      const auto clf = make_classifier(s);
      Registry reg(s.registry_dir, s.classes);
      std::cout << to_json(search(clf, reg, read_bytes(images[0]), s.top_k)).dump(2) << '\n';
    } else if (*serve_cmd) {
      const auto clf = make_classifier(s);
      Registry reg(s.registry_dir, s.classes);
      if (reg.recovered()) {
        std::fprintf(stderr, "journal line %zu was corrupt (%s); restored %zu records\n", reg.recovered()->line,
                     reg.recovered()->reason.c_str(), reg.size());
      }
      HttpService svc(clf, reg);
      const int p = s.port ? *s.port : port_from_env();
      std::fprintf(stderr, "serving %zu items on http://%s:%d (weights %s)\n", reg.size(), s.host.c_str(), p,
                   clf.weights_digest().substr(0, 12).c_str());
      if (!svc.listen(s.host, p)) throw std::runtime_error("cannot listen on " + s.host + ":" + std::to_string(p));
    } else if (*bench_cmd) {
      // Random-init weights unless a file is given; latency does not depend on values.
      for (const auto res : resolutions) {
        auto rs = s;
        rs.input_resolution = res;
        const auto spec = rs.network();
        const auto w = s.weights.empty() ? init_weights<float>(spec, s.seed) : read_weights(s.weights, spec);
        std::printf("%s\n", format_latency(bench_inference(spec, w, res, iterations, warmup)).c_str());
      }
    } else if (*count_cmd) {
      const auto spec = s.network();
      std::printf("params\t%llu\n", static_cast<unsigned long long>(count_params(spec)));
      std::printf("flops\t%llu\n", static_cast<unsigned long long>(count_flops(spec)));
      std::printf("resolution\t%zu\n", s.input_resolution);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lostnet: %s\n", e.what());
    return 1;
  }
  return 0;
}
