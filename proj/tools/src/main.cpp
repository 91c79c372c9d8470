// dit: command-line entry point.
//
//   dit train       --config run.json --steps 2000 --seed 0 [--resume ckpt]
//   dit sample      --ckpt ckpt.ditt --class 3 --cfg-scale 4 --steps 250 --count 16
//   dit flops       --model XL/2 --image-size 256 --variant adaln-zero --format text
//   dit conformance
//   dit gradcheck   [--config model.json] [--variant all]
//   dit schedule    --steps 250
//   dit sweep       --grid a=ckpt_a.ditt,b=ckpt_b.ditt --steps-list 16,32,64

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dit/analysis.hpp"
#include "dit/errors.hpp"
#include "dit/eval.hpp"
#include "dit/model_check.hpp"
#include "dit/sampler.hpp"
#include "dit/schedule.hpp"
#include "dit/tensor_io.hpp"
#include "dit/trainer.hpp"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dit::cli {
namespace {

struct UsageError : std::runtime_error {
  UsageError(const std::string& what, std::string fix) : std::runtime_error(what), remedy(std::move(fix)) {}
  std::string remedy;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string(), "pass an existing JSON file to --config");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what(), "fix the JSON syntax");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<int> parse_int_list(const std::string& text, const char* flag) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string("bad integer '") + item + "' in " + flag, std::string("use e.g. ") + flag + " 16,32,64");
    }
  }
  if (out.empty()) throw UsageError(std::string(flag) + " is empty", std::string("use e.g. ") + flag + " 16,32,64");
  return out;
}

// Latent geometry of a preset at a given image resolution (8x VAE downsampling).
DiTConfig preset(const std::string& name, int image_size, const std::string& variant) {
  DiTConfig c;
  if (name == "mini" || name == "DiT-mini") {
    c = mini_config();
  } else {
    if (image_size % 8 != 0) throw UsageError("image size must be a multiple of 8", "use e.g. --image-size 256");
    c = named_config(name, image_size / 8);
  }
  if (!variant.empty()) c.variant = parse_variant(variant);
  c.validate();
  return c;
}

std::string format_count(std::uint64_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config_path, model, variant, resume, out_dir;
  std::optional<std::int64_t> steps, checkpoint_every;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<int> batch_size;
  std::optional<double> lr, ema_decay;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  TrainState state;
  if (!a.resume.empty()) {
    if (!a.config_path.empty() || !a.model.empty() || !a.variant.empty()) {
      throw UsageError("--resume takes the configuration from the checkpoint", "drop --config/--model/--variant");
    }
    state = load_checkpoint(a.resume);
    if (a.steps) state.train.steps = *a.steps;
    if (a.checkpoint_every) state.train.checkpoint_every = *a.checkpoint_every;
    if (a.seed || a.data_seed || a.batch_size || a.lr || a.ema_decay) {
      throw UsageError("only --steps and --checkpoint-every may change on resume", "remove the other overrides");
    }
    state.train.validate();
  } else {
    DiTConfig model = mini_config();
    TrainConfig train;
    if (!a.config_path.empty()) {
      const auto j = read_json(a.config_path);
      if (j.contains("model") || j.contains("train")) {
        if (j.contains("model")) model = j.at("model").get<DiTConfig>();
        if (j.contains("train")) train = j.at("train").get<TrainConfig>();
      } else {
        model = j.get<DiTConfig>();
      }
    }
    if (!a.model.empty()) model = preset(a.model, model.input_size * 8, "");
    if (!a.variant.empty()) model.variant = parse_variant(a.variant);
    if (a.steps) train.steps = *a.steps;
    if (a.seed) train.seed = *a.seed;
    if (a.data_seed) train.data_seed = *a.data_seed;
    if (a.batch_size) train.batch_size = *a.batch_size;
    if (a.lr) train.learning_rate = *a.lr;
    if (a.ema_decay) train.ema_decay = *a.ema_decay;
    if (a.checkpoint_every) train.checkpoint_every = *a.checkpoint_every;
    state = TrainState::fresh(model, train);
  }

  Run run("train", argv, a.out_dir);
  run.config() = {{"model", state.model}, {"train", state.train}};
  run.seeds() = {{"seed", state.train.seed}, {"data_seed", state.train.data_seed}};
  if (!a.resume.empty()) run.results()["resumed_from"] = a.resume;

  const auto dataset = make_dataset(state.model, state.train);
  TrainRunOptions opts;
  opts.out_dir = run.dir();
  const auto total = state.train.steps;
  opts.on_step = [&](const StepLog& log) {
    if (!a.quiet && (log.step % 100 == 0 || log.step == total)) {
      std::printf("step %lld/%lld  l_simple %.5f  l_vlb %.5f\n", static_cast<long long>(log.step),
                  static_cast<long long>(total), log.l_simple, log.l_vlb);
      std::fflush(stdout);
    }
  };
  auto result = train(std::move(state), dataset, opts);
  run.artifact(run.path("loss.csv"));
  json ckpts = json::array();
  for (const auto& c : result.checkpoints) {
    run.artifact(c);
    ckpts.push_back(c.string());
  }
  run.results()["checkpoints"] = ckpts;
  run.results()["final_step"] = result.state.step;
  if (!result.log.empty()) {
    run.results()["final_l_simple"] = result.log.back().l_simple;
    run.results()["final_l_vlb"] = result.log.back().l_vlb;
  }
  std::printf("run directory: %s\n", run.dir().c_str());
  return run.finish();
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
  std::string ckpt, out;
  std::vector<std::int64_t> classes;
  double cfg_scale = 1.0;
  int steps = 250;
  int count = 16;
  std::uint64_t seed = 0;
  int threads = 1;
  int batch_size = 256;
  int previews = 8;
  bool raw = false;
  bool clip = false;
};

int cmd_sample(const SampleArgs& a, const std::vector<std::string>& argv) {
  if (a.ckpt.empty()) throw UsageError("--ckpt is required", "pass a checkpoint written by `dit train`");
  const auto state = load_checkpoint(a.ckpt);
  SampleRequest req;
  req.count = a.count;
  req.guidance_scale = a.cfg_scale;
  req.num_steps = a.steps;
  req.seed = a.seed;
  req.clip_x0 = a.clip;
  if (a.classes.size() == 1 && a.classes[0] < 0) {
    // unconditional
  } else if (a.classes.empty()) {
    for (int i = 0; i < a.count; ++i) req.labels.push_back(i % state.model.num_classes);
  } else {
    req.labels = a.classes;
  }
  const auto schedule = state.train.schedule();
  try {
    req.validate(state.model, schedule);
  } catch (const std::exception& e) {
    throw UsageError(e.what(), "check --class/--count/--steps/--cfg-scale against the checkpoint");
  }
  SampleOptions opts;
  opts.threads = a.threads;
  opts.batch_size = a.batch_size;

  Run run("sample", argv, a.out);
  run.config() = {{"checkpoint", a.ckpt},    {"model", state.model},        {"weights", a.raw ? "raw" : "ema"},
                  {"cfg_scale", a.cfg_scale}, {"steps", a.steps},            {"count", a.count},
                  {"labels", req.labels},     {"clip_x0", a.clip},           {"threads", a.threads},
                  {"batch_size", a.batch_size}};
  run.seeds() = {{"seed", a.seed}};

  const auto result = sample(a.raw ? state.params : state.ema, state.model, schedule, req, opts);
  TensorArchive ar;
  ar.metadata = json{{"format", "dit-samples"}, {"checkpoint", a.ckpt}, {"seed", a.seed}, {"steps", a.steps},
                     {"cfg_scale", a.cfg_scale}}
                    .dump();
  ar.put("samples", result.samples);
  const auto labels = req.label_for_each();
  ar.put_i64("labels", Shape{labels.size()}, labels);
  const auto samples_path = run.path("samples.ditt");
  ar.save(samples_path);
  run.artifact(samples_path);
  for (int i = 0; i < std::min(a.previews, a.count); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03d.ppm", i);
    write_ppm(run.path(name), result.samples, static_cast<std::size_t>(i));
    run.artifact(run.path(name));
  }
  run.results()["model_evaluations"] = result.stats.model_evaluations;
  std::printf("model evaluations: %llu (%d images x %d steps%s)\n",
              static_cast<unsigned long long>(result.stats.model_evaluations), a.count, a.steps,
              a.cfg_scale > 1.0 ? " x 2 guided" : "");
  std::printf("run directory: %s\n", run.dir().c_str());
  return run.finish();
}

// ---------------------------------------------------------------- flops

struct FlopsArgs {
  std::string model = "XL/2", variant = "adaln-zero", format = "text", out_dir;
  int image_size = 256;
};

int cmd_flops(const FlopsArgs& a, const std::vector<std::string>& argv) {
  DiTConfig config;
  try {
    config = preset(a.model, a.image_size, a.variant);
  } catch (const ConfigError& e) {
    throw UsageError(e.what(), "use --model S|B|L|XL/{2,4,8} or mini, --variant adaln-zero|adaln|cross-attention|in-context");
  }
  const auto flops = count_flops(config);
  const auto params = count_params(config);
  std::ostringstream os;
  if (a.format == "json") {
    json j{{"model", a.model}, {"image_size", a.image_size}, {"variant", variant_name(config.variant)},
           {"tokens", config.tokens()}, {"sequence_length", flops.sequence_length}, {"blocks", flops.blocks},
           {"total_flops", flops.total()}, {"gflops", flops.gflops()}, {"params", params.total()}};
    for (const auto& c : flops.components) j["flops"][c.name] = flops.component_total(c.name);
    for (const auto& c : params.components) j["param_components"][c.name] = params.component_total(c.name);
    os << j.dump(2) << '\n';
  } else if (a.format == "csv") {
    os << "kind,component,per_block,count\n";
    for (const auto& c : flops.components) os << "flops," << c.name << ',' << c.count << ',' << flops.component_total(c.name) << '\n';
    os << "flops,total,," << flops.total() << '\n';
    for (const auto& c : params.components) os << "params," << c.name << ',' << c.count << ',' << params.component_total(c.name) << '\n';
    os << "params,total,," << params.total() << '\n';
  } else if (a.format == "text") {
    char line[160];
    std::snprintf(line, sizeof line, "DiT-%s  %dx%d  variant %s  tokens %d  blocks %d\n\n", a.model.c_str(),
                  a.image_size, a.image_size, std::string(variant_name(config.variant)).c_str(), config.tokens(), flops.blocks);
    os << line;
    std::snprintf(line, sizeof line, "%-24s %20s %12s\n", "component (MACs)", "total", "Gflops");
    os << line;
    for (const auto& c : flops.components) {
      const auto t = flops.component_total(c.name);
      std::snprintf(line, sizeof line, "%-24s %20s %12.3f\n", c.name.c_str(), format_count(t).c_str(), t * 1e-9);
      os << line;
    }
    std::snprintf(line, sizeof line, "%-24s %20s %12.2f\n\n", "total", format_count(flops.total()).c_str(), flops.gflops());
    os << line;
    std::snprintf(line, sizeof line, "%-24s %20s\n", "component (params)", "total");
    os << line;
    for (const auto& c : params.components) {
      std::snprintf(line, sizeof line, "%-24s %20s\n", c.name.c_str(), format_count(params.component_total(c.name)).c_str());
      os << line;
    }
    std::snprintf(line, sizeof line, "%-24s %20s  (%.1fM)\n", "total", format_count(params.total()).c_str(), params.millions());
    os << line;
  } else {
    throw UsageError("unknown --format '" + a.format + "'", "use --format text, csv or json");
  }
  std::cout << os.str();

  Run run("flops", argv, a.out_dir);
  run.config() = {{"model", a.model}, {"image_size", a.image_size}, {"config", config}, {"format", a.format}};
  run.results() = {{"total_flops", flops.total()}, {"gflops", flops.gflops()}, {"params", params.total()}};
  const auto path = run.path(a.format == "json" ? "flops.json" : a.format == "csv" ? "flops.csv" : "flops.txt");
  write_text(path, os.str());
  run.artifact(path);
  return run.finish();
}

// ---------------------------------------------------------------- conformance

int cmd_conformance(const std::string& out_dir, const std::vector<std::string>& argv) {
  const auto rows = conformance_table();
  std::ostringstream csv;
  csv << "table,model,variant,image_size,quantity,computed,reference,rel_error,tolerance,status\n";
  int failures = 0;
  std::printf("%-7s %-5s %-16s %5s %-14s %12s %10s %9s  %s\n", "table", "model", "variant", "res", "quantity",
              "computed", "reference", "rel.err", "status");
  for (const auto& r : rows) {
    failures += r.pass ? 0 : 1;
    const std::string tol = r.tolerance > 0 ? std::to_string(r.tolerance) : "3sf";
    std::printf("%-7s %-5s %-16s %5d %-14s %12.4f %10.2f %8.3f%%  %s\n", r.table.c_str(), r.model.c_str(),
                r.variant.c_str(), r.image_size, r.quantity.c_str(), r.computed, r.reference, 100 * r.relative_error(),
                r.pass ? "PASS" : "FAIL");
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%d,%s,%.6f,%.6g,%.6g,%s,%s\n", r.table.c_str(), r.model.c_str(),
                  r.variant.c_str(), r.image_size, r.quantity.c_str(), r.computed, r.reference, r.relative_error(),
                  tol.c_str(), r.pass ? "PASS" : "FAIL");
    csv << buf;
  }
  std::printf("%zu rows, %d failed\n", rows.size(), failures);
  Run run("conformance", argv, out_dir);
  run.results() = {{"rows", rows.size()}, {"failed", failures}};
  write_text(run.path("conformance.csv"), csv.str());
  run.artifact(run.path("conformance.csv"));
  return run.finish(failures == 0 ? 0 : 1);
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::string config_path, variant = "all", out_dir;
  std::uint64_t seed = 0;
  double step = 4e-3, perturbation = 0.1, tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a, const std::vector<std::string>& argv) {
  DiTConfig base = mini_config();
  if (!a.config_path.empty()) base = read_json(a.config_path).get<DiTConfig>();
  std::vector<BlockVariant> variants;
  if (a.variant == "all") {
    variants = all_variants();
  } else {
    variants.push_back(parse_variant(a.variant));
  }
  Run run("gradcheck", argv, a.out_dir);
  run.config() = {{"model", base}, {"step", a.step}, {"perturbation", a.perturbation}, {"tolerance", a.tolerance}};
  run.seeds() = {{"seed", a.seed}};
  json report = json::array();
  bool ok = true;
  for (auto v : variants) {
    auto config = base;
    config.variant = v;
    ModelGradCheckOptions opts;
    opts.seed = a.seed;
    opts.step = a.step;
    opts.perturbation = a.perturbation;
    const auto r = model_grad_check(config, opts);
    const bool pass = r.report.max_rel_error < a.tolerance;
    ok = ok && pass;
    std::printf("%-16s max rel error %.3e over %zu coordinates (worst %s[%zu])  %s\n",
                std::string(variant_name(v)).c_str(), r.report.max_rel_error, r.report.coordinates,
                r.worst_parameter.c_str(), r.report.worst_offset, pass ? "PASS" : "FAIL");
    std::fflush(stdout);
    report.push_back({{"variant", variant_name(v)},
                      {"max_rel_error", r.report.max_rel_error},
                      {"coordinates", r.report.coordinates},
                      {"worst_parameter", r.worst_parameter},
                      {"worst_offset", r.report.worst_offset},
                      {"analytic", r.report.analytic},
                      {"numeric", r.report.numeric},
                      {"pass", pass}});
  }
  run.results()["variants"] = report;
  write_text(run.path("gradcheck.json"), report.dump(2) + "\n");
  run.artifact(run.path("gradcheck.json"));
  return run.finish(ok ? 0 : 1);
}

// ---------------------------------------------------------------- schedule

struct ScheduleArgs {
  int steps = 0;  // 0 keeps every step
  int t_max = 1000;
  double beta_start = 1e-4, beta_end = 2e-2;
  bool print = false;
  std::string out_dir;
};

int cmd_schedule(const ScheduleArgs& a, const std::vector<std::string>& argv) {
  const auto base = DiffusionSchedule::linear(a.t_max, a.beta_start, a.beta_end);
  const int steps = a.steps == 0 ? a.t_max : a.steps;
  if (steps < 1 || steps > a.t_max) throw UsageError("--steps must lie in 1..t_max", "use e.g. --steps 250");
  const auto csv = schedule_csv(steps == a.t_max ? base : respace(base, steps).schedule);
  if (a.print) std::cout << csv;
  Run run("schedule", argv, a.out_dir);
  run.config() = {{"t_max", a.t_max}, {"beta_start", a.beta_start}, {"beta_end", a.beta_end}, {"steps", steps}};
  write_text(run.path("schedule.csv"), csv);
  run.artifact(run.path("schedule.csv"));
  std::printf("wrote %s\n", run.path("schedule.csv").c_str());
  return run.finish();
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string grid, steps_list = "16,32,64,128,256,1000", cache_dir, out_dir;
  int count = 512;
  std::uint64_t seed = 0, extractor_seed = 0;
  double cfg_scale = 1.0;
  int reference_count = 10000;
  int threads = 1;
  bool raw = false;
};

int cmd_sweep(const SweepArgs& a, const std::vector<std::string>& argv) {
  if (a.grid.empty()) throw UsageError("--grid is required", "pass name=checkpoint entries separated by commas");
  std::vector<SweepPoint> points;
  std::stringstream ss(a.grid);
  std::string entry;
  while (std::getline(ss, entry, ',')) {
    if (entry.empty()) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) {
      points.push_back({fs::path(entry).parent_path().filename().string() + "/" + fs::path(entry).stem().string(), entry});
    } else {
      points.push_back({entry.substr(0, eq), entry.substr(eq + 1)});
    }
  }
  EvalProtocol protocol;
  protocol.sample_count = static_cast<std::size_t>(a.count);
  protocol.step_counts = parse_int_list(a.steps_list, "--steps-list");
  protocol.guidance_scale = a.cfg_scale;
  protocol.sample_seed = a.seed;
  protocol.extractor_seed = a.extractor_seed;
  protocol.reference_count = static_cast<std::size_t>(a.reference_count);
  protocol.use_ema = !a.raw;
  protocol.sampling.threads = a.threads;
  Run run("sweep", argv, a.out_dir);
  protocol.cache_dir = a.cache_dir.empty() ? run.dir() / "cache" : fs::path(a.cache_dir);

  json grid = json::array();
  for (const auto& p : points) grid.push_back({{"name", p.name}, {"checkpoint", p.checkpoint.string()}});
  run.config() = {{"grid", grid},
                  {"steps_list", protocol.step_counts},
                  {"count", a.count},
                  {"cfg_scale", a.cfg_scale},
                  {"reference_count", a.reference_count},
                  {"weights", a.raw ? "raw" : "ema"}};
  run.seeds() = {{"sample_seed", a.seed}, {"extractor_seed", a.extractor_seed}};

  const auto records = scaling_sweep(points, protocol);
  write_sweep_csv(run.path("sweep.csv"), records);
  run.artifact(run.path("sweep.csv"));

  // Plot-ready series: per model, metric against per-image sampling Tflops.
  std::map<std::string, json> series;
  int skipped = 0;
  for (const auto& r : records) {
    if (r.skipped) {
      ++skipped;
      std::printf("skip %-24s steps %4d: %s\n", r.model.c_str(), r.sampling_steps, r.note.c_str());
      continue;
    }
    auto& s = series[r.model];
    s["sample_tflops"].push_back(r.sample_tflops);
    s["metric"].push_back(r.metric);
    s["sampling_steps"].push_back(r.sampling_steps);
    s["training_gflops"] = r.training_gflops;
    std::printf("%-24s steps %4d  metric %10.5f  sample Tflops %.3e\n", r.model.c_str(), r.sampling_steps, r.metric,
                r.sample_tflops);
  }
  json plot = json::object();
  for (auto& [name, s] : series) plot[name] = s;
  write_text(run.path("plot.json"), plot.dump(2) + "\n");
  run.artifact(run.path("plot.json"));
  run.results() = {{"records", records.size()}, {"skipped", skipped}};
  return run.finish();
}

}  // namespace
}  // namespace dit::cli

int main(int argc, char** argv) {
  using namespace dit::cli;
  const std::vector<std::string> args(argv, argv + argc);

  CLI::App app{"Diffusion transformer toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DIT_VERSION);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train on the toy latent dataset");
  t->add_option("--config", train.config_path, "JSON file with \"model\" and/or \"train\" objects");
  t->add_option("--model", train.model, "preset: mini, S/2 ... XL/8");
  t->add_option("--variant", train.variant, "block variant");
  t->add_option("--steps", train.steps, "total training steps");
  t->add_option("--seed", train.seed, "training seed");
  t->add_option("--data-seed", train.data_seed, "toy dataset seed");
  t->add_option("--batch-size", train.batch_size);
  t->add_option("--lr", train.lr, "learning rate");
  t->add_option("--ema-decay", train.ema_decay);
  t->add_option("--checkpoint-every", train.checkpoint_every, "0 keeps only the final checkpoint");
  t->add_option("--out-dir", train.out_dir, "run directory (default: runs/<timestamp>-train)");
  t->add_option("--resume", train.resume, "continue from a checkpoint");
  t->add_flag("--quiet", train.quiet);

  SampleArgs smp;
  auto* s = app.add_subcommand("sample", "draw samples from a checkpoint");
  s->add_option("--ckpt", smp.ckpt, "checkpoint file")->required();
  s->add_option("--class", smp.classes, "class label(s); -1 for unconditional; default cycles classes");
  s->add_option("--cfg-scale", smp.cfg_scale, "classifier-free guidance scale (>= 1)");
  s->add_option("--steps", smp.steps, "sampling steps");
  s->add_option("--count", smp.count, "number of samples");
  s->add_option("--seed", smp.seed);
  s->add_option("--threads", smp.threads);
  s->add_option("--batch-size", smp.batch_size, "rows per network call");
  s->add_option("--previews", smp.previews, "PPM previews to write");
  s->add_option("--out", smp.out, "run directory (default: runs/<timestamp>-sample)");
  s->add_flag("--raw", smp.raw, "use raw weights instead of EMA");
  s->add_flag("--clip", smp.clip, "clip predicted x0 to [-1, 1]");

  FlopsArgs fl;
  auto* f = app.add_subcommand("flops", "analytic forward cost and parameter breakdown");
  f->add_option("--model", fl.model, "preset: S/2 ... XL/8 or mini");
  f->add_option("--image-size", fl.image_size, "image resolution (latent edge = size / 8)");
  f->add_option("--variant", fl.variant, "block variant");
  f->add_option("--format", fl.format, "text, csv or json");
  f->add_option("--out-dir", fl.out_dir);

  std::string conf_out;
  auto* c = app.add_subcommand("conformance", "compare analytic counts with the published model tables");
  c->add_option("--out-dir", conf_out);

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of the full model and loss");
  g->add_option("--config", gc.config_path, "model config JSON (default: DiT-mini)");
  g->add_option("--variant", gc.variant, "block variant or 'all'");
  g->add_option("--seed", gc.seed);
  g->add_option("--step", gc.step, "finite-difference step (four-point central stencil)");
  g->add_option("--perturbation", gc.perturbation, "stddev added to the initial parameters");
  g->add_option("--tolerance", gc.tolerance, "maximum relative error");
  g->add_option("--out-dir", gc.out_dir);

  ScheduleArgs sc;
  auto* sch = app.add_subcommand("schedule", "write the (respaced) noise schedule as CSV");
  sch->add_option("--steps", sc.steps, "respaced step count (default: all)");
  sch->add_option("--t-max", sc.t_max);
  sch->add_option("--beta-start", sc.beta_start);
  sch->add_option("--beta-end", sc.beta_end);
  sch->add_flag("--print", sc.print, "also print the CSV");
  sch->add_option("--out-dir", sc.out_dir);

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "toy Frechet metric over checkpoints and sampling step counts");
  w->add_option("--grid", sw.grid, "name=checkpoint[,name=checkpoint...]")->required();
  w->add_option("--steps-list", sw.steps_list, "comma-separated sampling step counts");
  w->add_option("--count", sw.count, "samples per record");
  w->add_option("--seed", sw.seed, "sampling seed");
  w->add_option("--extractor-seed", sw.extractor_seed);
  w->add_option("--cfg-scale", sw.cfg_scale);
  w->add_option("--reference-count", sw.reference_count);
  w->add_option("--cache-dir", sw.cache_dir, "reference statistics cache");
  w->add_option("--threads", sw.threads);
  w->add_option("--out-dir", sw.out_dir);
  w->add_flag("--raw", sw.raw, "use raw weights instead of EMA");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string sub;
    for (auto* sc_ : app.get_subcommands()) sub = sc_->get_name();
    std::cerr << "error: " << e.what() << "\n  remedy: run `dit " << (sub.empty() ? "" : sub + " ") << "--help`\n";
    return 2;
  }

  try {
    if (t->parsed()) return cmd_train(train, args);
    if (s->parsed()) return cmd_sample(smp, args);
    if (f->parsed()) return cmd_flops(fl, args);
    if (c->parsed()) return cmd_conformance(conf_out, args);
    if (g->parsed()) return cmd_gradcheck(gc, args);
    if (sch->parsed()) return cmd_schedule(sc, args);
    if (w->parsed()) return cmd_sweep(sw, args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n  remedy: " << e.remedy << '\n';
    return 2;
  } catch (const dit::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n  remedy: fix the configuration values\n";
    return 2;
  } catch (const dit::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n  remedy: pass a file written by this tool\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
