#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <ostream>
#include <sstream>

#include "commands.hpp"
#include "freeevent/errors.hpp"
#include "freeevent/weights_io.hpp"

namespace freeevent::cli {

namespace {

namespace fs = std::filesystem;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return kExitUsage;
    case ErrorCategory::data: return kExitData;
    case ErrorCategory::numeric: return kExitNumeric;
  }
  return kExitData;
}

// Flags whose values are captured by the resolved config and therefore
// dropped from the replay argument list.
const std::set<std::string> kConfigFlags = {"--config", "--set", "--weights", "--ref", "--masks", "--prompt", "--seed"};

void add_config_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--config", f.config_file, "run config file (key=value lines)");
  app->add_option("--set", f.sets, "override a config key (key=value), repeatable")->allow_extra_args(false);
  app->add_option("--weights", f.weights, "model weights file");
  app->add_option("--ref", f.ref, "reference image (PNG)");
  app->add_option("--masks", f.masks, "comma-separated entity masks (PNG or .rle)");
  app->add_option("--prompt", f.prompt, "prompt with entity bindings: 'words | e1=tokensA-B, ...'");
  app->add_option("--seed", f.seed, "sampling seed");
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ParameterError(std::string("malformed ") + what + " list '" + s + "'");
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ParameterError("malformed number list '" + s + "'");
    }
  }
  return out;
}

fs::path manifest_path_for(const std::string& command, const fs::path& out) {
  if (command == "generate" || command == "baseline" || command == "train-toy") return out.string() + ".manifest";
  return out / "run.manifest";
}

void write_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& args,
                    const RunConfig* config, const std::vector<fs::path>& artifacts) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write run manifest " + path.string());
  os << "command=" << command << '\n';
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (kConfigFlags.count(args[i]) && config) {
      ++i;
      continue;
    }
    os << "arg=" << args[i] << '\n';
  }
  if (config) {
    std::istringstream cfg(serialize_run_config(*config));
    std::string line;
    while (std::getline(cfg, line)) os << "config." << line << '\n';
  }
  for (const fs::path& a : artifacts)
    if (fs::is_regular_file(a)) os << "output=" << hex64(file_digest(a)) << ' ' << a.string() << '\n';
}

struct Manifest {
  std::string command;
  std::vector<std::string> args;
  std::vector<std::string> config;
  std::vector<std::pair<std::string, std::string>> outputs;  // digest, path
};

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("command=", 0) == 0) m.command = line.substr(8);
    else if (line.rfind("arg=", 0) == 0) m.args.push_back(line.substr(4));
    else if (line.rfind("config.", 0) == 0) m.config.push_back(line.substr(7));
    else if (line.rfind("output=", 0) == 0) {
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw DataError("malformed output line in " + path.string());
      m.outputs.emplace_back(line.substr(7, sp - 7), line.substr(sp + 1));
    } else if (!line.empty()) {
      throw DataError("unrecognized manifest line '" + line + "'");
    }
  }
  if (m.command.empty()) throw DataError(path.string() + " names no command");
  return m;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, bool use_env);

int replay(const fs::path& manifest, std::ostream& out, std::ostream& err) {
  const Manifest m = read_manifest(manifest);
  std::vector<std::string> args{m.command};
  args.insert(args.end(), m.args.begin(), m.args.end());
  for (const std::string& c : m.config) {
    args.push_back("--set");
    args.push_back(c);
  }
  const int code = dispatch(args, out, err, false);
  if (code != 0) return code;
  int mismatches = 0;
  for (const auto& [digest, path] : m.outputs) {
    const std::string now = fs::exists(path) ? hex64(file_digest(path)) : "missing";
    if (now != digest) {
      err << "replay mismatch: " << path << " (" << now << " vs recorded " << digest << ")\n";
      ++mismatches;
    }
  }
  if (mismatches) return kExitData;
  out << "replay reproduced " << m.outputs.size() << " output(s)\n";
  return 0;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, bool use_env) {
  CLI::App app{"freeevent: training-free event customization on a toy latent diffusion model"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  MakeShapesArgs shapes;
  auto* c_shapes = app.add_subcommand("make-shapes", "write the synthetic shapes training set");
  c_shapes->add_option("--out", shapes.out, "output directory")->required();
  c_shapes->add_option("--count", shapes.count, "number of images");
  c_shapes->add_option("--seed", shapes.seed, "generator seed");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train-toy", "train the toy denoiser");
  c_train->add_option("--data", train.data, "dataset directory (images/ + labels.tsv)")->required();
  c_train->add_option("--steps", train.steps, "optimizer steps");
  c_train->add_option("--seed", train.seed, "training seed");
  c_train->add_option("--out", train.out, "weights file to write")->required();
  c_train->add_option("--batch", train.batch, "minibatch size");
  c_train->add_option("--lr", train.lr, "peak learning rate");
  c_train->add_option("--loss-csv", train.loss_csv, "loss curve CSV (default: <out>.loss.csv)");
  c_train->add_option("--init", train.init, "start from these weights");

  ConfigFlags flags;
  flags.use_env = use_env;
  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "customize a reference event with a target prompt");
  add_config_flags(c_gen, flags);
  c_gen->add_option("--out", gen.out, "output image")->required();

  auto* c_base = app.add_subcommand("baseline", "plain classifier-free guided sampling");
  add_config_flags(c_base, flags);
  c_base->add_option("--out", gen.out, "output image")->required();

  AblateArgs abl;
  std::string toggles_csv;
  auto* c_abl = app.add_subcommand("ablate", "run toggle sets with shared seeds and tabulate metrics");
  add_config_flags(c_abl, flags);
  c_abl->add_option("--toggles", toggles_csv, "comma-separated toggle sets");
  c_abl->add_option("--seeds", abl.seeds, "number of paired seeds");
  c_abl->add_flag("--scenario", abl.scenario, "use the built-in toy scenario as reference and prompt");
  c_abl->add_option("--jobs", abl.jobs, "parallel runs");
  c_abl->add_option("--out", abl.out, "output directory")->required();

  BenchArgs bench;
  std::string ks_csv;
  std::string switch_colors = "on";
  auto* c_bench = app.add_subcommand("bench", "toy retrieval benchmark");
  add_config_flags(c_bench, flags);
  c_bench->add_option("--make-toy", bench.make_toy, "write the toy benchmark to DIR");
  c_bench->add_option("--classes", bench.classes, "event classes for --make-toy");
  c_bench->add_option("--refs", bench.refs, "references per class for --make-toy");
  c_bench->add_option("--bench-seed", bench.bench_seed, "jitter seed for --make-toy");
  c_bench->add_option("--generate", bench.generate, "generate a target image for every sample of DIR");
  c_bench->add_option("--switch-colors", switch_colors, "on/off: target prompts switch entity colors");
  c_bench->add_option("--evaluate", bench.evaluate, "evaluate generated targets against DIR");
  c_bench->add_option("--gen-dir", bench.gen_dir, "directory of generated <sample_id>.png");
  c_bench->add_option("--encoder", bench.encoder, "image encoder name");
  c_bench->add_option("--ks", ks_csv, "comma-separated k values");
  c_bench->add_option("--report", bench.report, "write key=value report here");
  c_bench->add_option("--jobs", bench.jobs, "parallel workers");

  InspectArgs insp;
  std::string steps_csv;
  auto* c_insp = app.add_subcommand("inspect-attn", "dump attention heatmaps at one layer");
  add_config_flags(c_insp, flags);
  c_insp->add_option("--site", insp.site, "layer address, e.g. dec2:1")->required();
  c_insp->add_option("--steps", steps_csv, "comma-separated sampling steps")->required();
  c_insp->add_option("--out", insp.out, "output directory")->required();

  CalibrateArgs cal;
  std::string etas_csv;
  fs::path cal_out;
  auto* c_cal = app.add_subcommand("calibrate-eta", "sweep the guidance scale on toy benchmark scenes");
  add_config_flags(c_cal, flags);
  c_cal->add_option("--etas", etas_csv, "comma-separated eta values");
  c_cal->add_option("--seeds", cal.seeds, "runs per eta");
  c_cal->add_option("--clip", cal.clip, "largest per-step guidance shift of a latent entry before a run counts as clipped");
  c_cal->add_option("--jobs", cal.jobs, "parallel runs");

  fs::path manifest;
  auto* c_replay = app.add_subcommand("replay", "re-run a command from its run manifest and compare outputs");
  c_replay->add_option("manifest", manifest, "run manifest")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  const std::vector<std::string> sub_args(args.begin() + 1, args.end());
  Context ctx{out, err, {}};
  try {
    if (sub == c_replay) return replay(manifest, out, err);
    if (sub == c_shapes) {
      cmd_make_shapes(ctx, shapes);
      write_manifest(shapes.out / "run.manifest", name, sub_args, nullptr, ctx.artifacts);
      return 0;
    }
    if (sub == c_train) {
      cmd_train_toy(ctx, train);
      write_manifest(manifest_path_for(name, train.out), name, sub_args, nullptr, ctx.artifacts);
      return 0;
    }

    const RunConfig config = resolve_config(flags);
    fs::path out_path;
    if (sub == c_gen) {
      cmd_generate(ctx, config, gen);
      out_path = gen.out;
    } else if (sub == c_base) {
      cmd_baseline(ctx, config, gen);
      out_path = gen.out;
    } else if (sub == c_abl) {
      if (!toggles_csv.empty()) {
        abl.toggles.clear();
        std::stringstream ss(toggles_csv);
        std::string item;
        while (std::getline(ss, item, ',')) abl.toggles.push_back(item);
      }
      cmd_ablate(ctx, config, abl);
      out_path = abl.out;
    } else if (sub == c_bench) {
      if (!ks_csv.empty()) bench.ks = parse_int_list(ks_csv, "k");
      if (switch_colors != "on" && switch_colors != "off") throw ParameterError("--switch-colors takes on or off");
      bench.switch_colors = switch_colors == "on";
      cmd_bench(ctx, config, bench);
      out_path = !bench.make_toy.empty() ? bench.make_toy : bench.gen_dir;
      if (!bench.evaluate.empty() && !bench.report.empty()) out_path = bench.report.parent_path();
    } else if (sub == c_insp) {
      insp.steps = parse_int_list(steps_csv, "step");
      cmd_inspect_attn(ctx, config, insp);
      out_path = insp.out;
    } else if (sub == c_cal) {
      if (!etas_csv.empty()) cal.etas = parse_double_list(etas_csv);
      cmd_calibrate_eta(ctx, config, cal);
      return 0;
    }
    if (!out_path.empty()) write_manifest(manifest_path_for(name, out_path), name, sub_args, &config, ctx.artifacts);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return dispatch(args, out, err, true);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace freeevent::cli
