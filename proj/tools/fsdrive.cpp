#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fsdrive/bench.hpp"
#include "fsdrive/checkpoint.hpp"
#include "fsdrive/corpus.hpp"
#include "fsdrive/dataset.hpp"
#include "fsdrive/metrics.hpp"
#include "fsdrive/optim.hpp"
#include "fsdrive/render.hpp"
#include "fsdrive/zoo.hpp"

namespace fs = std::filesystem;
using namespace fsdrive;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr int kUsageExit = 64;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return 2;
    case ErrorKind::shape_mismatch: return 3;
    case ErrorKind::input_not_found: return 4;
    case ErrorKind::format: return 5;
    case ErrorKind::bad_magic: return 6;
    case ErrorKind::truncated: return 7;
    case ErrorKind::unsupported_version: return 8;
    case ErrorKind::divergence: return 9;
    case ErrorKind::io: return 10;
  }
  return 1;
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) fail(ErrorKind::input_not_found, what + " not found: " + p.string());
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size()) fail(ErrorKind::invalid_argument, "expected a comma-separated list of integers, got '" + text + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::vector<std::size_t>> parse_sets(const std::string& text) {
  std::vector<std::vector<std::size_t>> sets;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ';');)
    if (!item.empty()) sets.push_back(parse_list(item));
  if (sets.empty()) fail(ErrorKind::invalid_argument, "expected ';'-separated sets such as '7,5;5,3', got '" + text + "'");
  return sets;
}

/// Settings every subcommand shares.
struct Common {
  std::uint64_t seed = 0;
  std::string out = "fsdrive_out";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed, recorded in every output")->capture_default_str();
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
}

/// Seed, version and every option value of the run, in the key=value form
/// accepted by --config.
void write_stanza(const CLI::App* sub, const Common& c) {
  std::ostringstream os;
  os << "# fsdrive " << kVersion << " " << sub->get_name() << "\n";
#if defined(__VERSION__)
  os << "# compiler " << __VERSION__ << "\n";
#endif
  os << "# seed " << c.seed << "\n";
  os << sub->config_to_str(true, false);
  write_text_file(fs::path(c.out) / "run.txt", os.str());
}

Task infer_task(const Model<float>& m) {
  if (m.is_classifier()) return Task::discrete;
  return m.output_width() == 1 ? Task::real : Task::brake_throttle;
}

struct ModelChoice {
  std::string arch = "3CL-2FC";
  std::string task = "discrete";
  std::string filters;
  std::string strides;
  bool miniature = false;
};

void add_model_options(CLI::App* sub, ModelChoice& m) {
  sub->add_option("--arch", m.arch, "Architecture name (e.g. 3CL-2FC)")->capture_default_str();
  sub->add_option("--task", m.task, "discrete, real or brake_throttle")->capture_default_str();
  sub->add_option("--filters", m.filters, "Conv kernel sizes, e.g. 7,7,5,5");
  sub->add_option("--strides", m.strides, "Conv strides, e.g. 2,2,1,1");
  sub->add_flag("--miniature", m.miniature, "Reduced-resolution clone (stride 1, kernels shrunk to fit) instead of the native geometry");
}

ModelSpec build_spec(const ModelChoice& m, std::size_t size) {
  const Task task = parse_task(m.task);
  const auto filters = parse_list(m.filters), strides = parse_list(m.strides);
  const std::size_t native = m.miniature ? kFrameSize : size;
  ModelSpec spec;
  switch (task) {
    case Task::discrete:
      if (!filters.empty() || !strides.empty()) fail(ErrorKind::invalid_argument, "discrete models take no filter/stride overrides");
      spec = make_discrete_model(m.arch, native);
      break;
    case Task::real: spec = make_realvalue_model(m.arch, filters, strides, native); break;
    case Task::brake_throttle: spec = make_brake_throttle_model(filters, strides, native); break;
  }
  return m.miniature ? miniature(spec, size, size) : spec;
}

Manifest load_manifest(const std::string& path) {
  require_exists(path, "manifest");
  return parse_manifest(read_text_file(path));
}

Model<float> load_model(const std::string& path) {
  require_exists(path, "checkpoint");
  return load_checkpoint(path);
}

// ---------------------------------------------------------------------------

struct PrepArgs {
  std::string telemetry, frames, crop = "center", synth;
  std::size_t size = 0;
};

int cmd_prep(const CLI::App* sub, const Common& c, const PrepArgs& a) {
  fs::create_directories(c.out);
  fs::path telemetry = a.telemetry, frames = a.frames;
  std::size_t size = a.size ? a.size : kFrameSize;
  if (!a.synth.empty()) {
    std::size_t n = 1000, synth_size = 64;
    std::stringstream ss(a.synth);
    for (std::string kv; std::getline(ss, kv, ',');) {
      const auto eq = kv.find('=');
      const auto key = kv.substr(0, eq);
      const auto value = eq == std::string::npos ? std::vector<std::size_t>{} : parse_list(kv.substr(eq + 1));
      if (value.size() != 1 || (key != "n" && key != "size")) fail(ErrorKind::invalid_argument, "--synth expects n=<count>[,size=<px>], got '" + a.synth + "'");
      (key == "n" ? n : synth_size) = value[0];
    }
    const fs::path dir = fs::path(c.out) / "synth";
    write_synth_corpus(synth_track_dataset(n, synth_size, c.seed), dir);
    telemetry = dir / "telemetry.csv";
    frames = dir / "frames";
    if (a.size == 0) size = synth_size;
    std::cout << "synthetic corpus: " << n << " frames of " << synth_size << "x" << synth_size << " in " << dir.string() << "\n";
  } else {
    if (telemetry.empty() || frames.empty()) fail(ErrorKind::invalid_argument, "prep needs --telemetry and --frames (or --synth)");
    require_exists(telemetry, "telemetry CSV");
    require_exists(frames / "index.csv", "frame index");
  }
  const auto m = prepare_manifest(telemetry, frames, parse_crop(a.crop), size, c.seed);
  write_text_file(fs::path(c.out) / "manifest.tsv", manifest_to_text(m));
  std::ostringstream summary;
  summary << "splits " << m.splits.at("train").size() << "/" << m.splits.at("validation").size() << "/" << m.splits.at("test").size()
          << ", " << m.splits.at("dropped").size() << " dropped\n";
  summary << "skipped_rows " << m.skipped_rows.size() << "\n";
  summary << "clamped_values " << m.clamped_values << "\n";
  write_text_file(fs::path(c.out) / "summary.txt", summary.str());
  write_stanza(sub, c);
  std::cout << summary.str();
  return 0;
}

struct TrainArgs {
  std::string manifest, checkpoint, resume;
  ModelChoice model;
  double lr = 0.01, decay = 1.0 / 1.01;
  std::size_t batch = 64, epochs = 100;
};

void add_train_options(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--lr", a.lr, "Initial learning rate")->capture_default_str();
  sub->add_option("--decay", a.decay, "Per-epoch learning-rate multiplier")->default_val(format_number(a.decay));
  sub->add_option("--batch", a.batch, "Batch size")->capture_default_str();
  sub->add_option("--epochs", a.epochs, "Epochs")->capture_default_str();
}

TrainConfig train_config(const TrainArgs& a, Task task, std::uint64_t seed) {
  TrainConfig t;
  t.initial_lr = a.lr;
  t.decay = a.decay;
  t.batch_size = a.batch;
  t.epochs = a.epochs;
  t.seed = seed;
  t.loss = loss_for(task);
  return t;
}

int cmd_train(const CLI::App* sub, const Common& c, const TrainArgs& a) {
  const auto m = load_manifest(a.manifest);
  Model<float> model = a.resume.empty() ? Model<float>(build_spec(a.model, m.image_size), c.seed) : load_model(a.resume);
  const Task task = a.resume.empty() ? parse_task(a.model.task) : infer_task(model);
  const auto cfg = train_config(a, task, c.seed);
  cfg.validate();
  const auto train_set = load_split(m, "train"), val_set = load_split(m, "validation");
  fs::create_directories(c.out);
  write_stanza(sub, c);
  std::cout << "model " << model.spec().name << " (" << model.parameter_count() << " parameters), task " << task_name(task) << ", "
            << train_set.size() << " train / " << val_set.size() << " validation frames\n";
  const auto h = train(model, std::span<const FramePair>(train_set), std::span<const FramePair>(val_set), task, cfg, [](const EpochStats& s) {
    std::printf("epoch %zu lr %.6g train_loss %.6g val_loss %.6g", s.epoch, s.lr, s.train_loss, s.val_loss);
    if (!std::isnan(s.val_accuracy)) std::printf(" val_acc %.4f", s.val_accuracy);
    for (double l1 : s.val_l1) std::printf(" val_l1 %.4f", l1);
    std::printf(" (%.1fs)\n", s.seconds);
    std::fflush(stdout);
  });
  write_text_file(fs::path(c.out) / "history.tsv", history_to_text(h));
  write_text_file(fs::path(c.out) / "timings.tsv", timings_to_text(h));
  if (h.diverged) {
    std::cerr << "training diverged: " << h.divergence << "\n";
    return exit_code(ErrorKind::divergence);
  }
  const fs::path ckpt = a.checkpoint.empty() ? fs::path(c.out) / "model.fspt" : fs::path(a.checkpoint);
  save_checkpoint(model, ckpt);
  std::cout << "checkpoint " << ckpt.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string manifest, checkpoint, split = "test";
  std::size_t batch = 64;
};

int cmd_eval(const CLI::App* sub, const Common& c, const EvalArgs& a) {
  const auto m = load_manifest(a.manifest);
  auto model = load_model(a.checkpoint);
  const auto pairs = load_split(m, a.split);
  const auto r = evaluate(model, std::span<const FramePair>(pairs), infer_task(model), a.batch, a.split);
  fs::create_directories(c.out);
  write_text_file(fs::path(c.out) / "metrics.txt", report_to_text(r));
  write_stanza(sub, c);
  std::cout << report_to_text(r);
  return 0;
}

struct GridArgs {
  std::string manifest, filter_sets = "7,5;5,5;5,3;3,3", stride_sets = "2,1;2,2";
  TrainArgs train;
  std::size_t threads = 1;
};

int cmd_gridsearch(const CLI::App* sub, const Common& c, const GridArgs& a) {
  const auto m = load_manifest(a.manifest);
  GridSearchConfig g;
  g.arch = a.train.model.arch;
  g.task = parse_task(a.train.model.task);
  g.frame_size = m.image_size;
  g.filter_sets = parse_sets(a.filter_sets);
  g.stride_sets = parse_sets(a.stride_sets);
  g.train = train_config(a.train, g.task, c.seed);
  g.threads = a.threads;
  const auto train_set = load_split(m, "train"), val_set = load_split(m, "validation");
  fs::create_directories(c.out);
  write_stanza(sub, c);
  const auto runs = grid_search(g, std::span<const FramePair>(train_set), std::span<const FramePair>(val_set));
  const auto table = grid_to_text(runs);
  write_text_file(fs::path(c.out) / "grid.tsv", table);
  std::cout << table;
  return 0;
}

struct AugmentArgs {
  std::string manifest, checkpoint, split = "test";
  double k = kDefaultShiftDegreesPerPixel;
  int shift_range = 40;
  std::size_t size = 0, batch = 64;
  bool write_frames = false;
};

struct AugItem {
  FramePair pair;
  int shift = 0;
  bool shifted = false;
};

int cmd_augment(const CLI::App* sub, const Common& c, const AugmentArgs& a) {
  const auto m = load_manifest(a.manifest);
  const auto pairs = load_split(m, a.split);
  require(a.shift_range >= 0, "--shift-range must be non-negative");
  std::vector<AugItem> normal, shifted;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Rng rng(derive_seed(c.seed, i));
    const int s = static_cast<int>(rng.below(2 * static_cast<std::uint64_t>(a.shift_range) + 1)) - a.shift_range;
    normal.push_back({pairs[i], 0, false});
    shifted.push_back({shift_augment(pairs[i], s, a.k), s, true});
  }
  const std::size_t size = a.size ? a.size : pairs.size();
  const auto mixed = build_mixed_set<AugItem>(normal, shifted, size, c.seed);
  fs::create_directories(c.out);
  write_stanza(sub, c);

  std::ostringstream listing;
  listing << "kind\tlog_row\tframe_index\tshift_px\tsteering\n";
  for (const auto& it : mixed)
    listing << (it.shifted ? "shifted" : "normal") << "\t" << it.pair.log_row << "\t" << it.pair.frame_index << "\t" << it.shift << "\t"
            << format_number(it.pair.record.steering) << "\n";
  write_text_file(fs::path(c.out) / "mixed.tsv", listing.str());
  if (a.write_frames) {
    const fs::path dir = fs::path(c.out) / "frames";
    fs::create_directories(dir);
    for (std::size_t i = 0; i < mixed.size(); ++i) write_pnm(tensor_to_image(mixed[i].pair.image), dir / frame_file_name(i));
  }
  std::size_t n_normal = 0;
  for (const auto& it : mixed) n_normal += !it.shifted;
  std::ostringstream report;
  report << "mixed_size\t" << mixed.size() << "\nnormal\t" << n_normal << "\nshifted\t" << mixed.size() - n_normal << "\n";
  report << "k\t" << format_number(a.k) << "\nshift_range\t" << a.shift_range << "\n";
  if (!a.checkpoint.empty()) {
    auto model = load_model(a.checkpoint);
    const Task task = infer_task(model);
    auto strip = [](const std::vector<AugItem>& items) {
      std::vector<FramePair> out;
      for (const auto& it : items) out.push_back(it.pair);
      return out;
    };
    const std::vector<std::pair<std::string, std::vector<FramePair>>> sets{{"normal", strip(normal)}, {"shifted", strip(shifted)}, {"mixed", strip(mixed)}};
    for (const auto& [name, set] : sets) {
      const auto r = evaluate(model, std::span<const FramePair>(set), task, a.batch, name);
      report << name << "_mean_loss\t" << format_number(r.mean_loss) << "\n";
      if (task == Task::discrete) report << name << "_accuracy\t" << format_number(r.accuracy) << "\n";
      for (std::size_t j = 0; j < r.mean_l1.size(); ++j) report << name << "_mean_l1_" << j << "\t" << format_number(r.mean_l1[j]) << "\n";
    }
  }
  write_text_file(fs::path(c.out) / "augment.txt", report.str());
  std::cout << report.str();
  return 0;
}

struct RenderArgs {
  std::string manifest, checkpoint, split = "test";
  std::size_t limit = 0;
};

/// Discrete predictions are drawn at the centre of their steering bin.
Prediction predict_one(Model<float>& model, Task task, const FramePair& p) {
  const std::size_t idx = 0;
  const auto b = make_batch<float>(std::span<const FramePair>(&p, 1), std::span<const std::size_t>(&idx, 1), task);
  const auto out = model.forward(b.inputs, Mode::eval);
  Prediction pr;
  if (task == Task::discrete) {
    static constexpr double centres[] = {50.0, 0.0, -50.0};
    pr.steering = centres[predicted_classes(out)[0] - 1];
  } else if (task == Task::real) {
    pr.steering = out[0];
  } else {
    pr.brake = out[0];
    pr.throttle = out[1];
  }
  return pr;
}

int cmd_render(const CLI::App* sub, const Common& c, const RenderArgs& a) {
  const auto m = load_manifest(a.manifest);
  auto pairs = load_split(m, a.split);
  std::sort(pairs.begin(), pairs.end(), [](const FramePair& x, const FramePair& y) { return x.frame_index < y.frame_index; });
  if (a.limit && pairs.size() > a.limit) pairs.resize(a.limit);
  std::vector<Prediction> preds;
  if (!a.checkpoint.empty()) {
    auto model = load_model(a.checkpoint);
    const Task task = infer_task(model);
    for (const auto& p : pairs) preds.push_back(predict_one(model, task, p));
  }
  write_stanza(sub, c);
  const auto n = render_sequence(std::span<const FramePair>(pairs), preds, c.out);
  std::cout << n << " overlay frames in " << c.out << "\n";
  return 0;
}

struct BenchArgs {
  std::string checkpoint;
  ModelChoice model{"4CL-3FC", "real"};
  std::size_t size = kFrameSize, warmup = 50, iters = 1000, batch = 1;
};

int cmd_bench(const CLI::App* sub, const Common& c, const BenchArgs& a) {
  Model<float> model = a.checkpoint.empty() ? Model<float>(build_spec(a.model, a.size), c.seed) : load_model(a.checkpoint);
  const auto r = bench_forward(model, a.warmup, a.iters, a.batch, c.seed);
  fs::create_directories(c.out);
  write_text_file(fs::path(c.out) / "latency.txt", latency_report_to_text(r));
  write_text_file(fs::path(c.out) / "latency.tsv", latency_table(r));
  write_stanza(sub, c);
  std::cout << latency_report_to_text(r);
  return 0;
}

struct ActivationArgs {
  std::string manifest, checkpoint, split = "test", layer, filters_dir;
  std::size_t batch = 64, batches = 0;
};

int cmd_activations(const CLI::App* sub, const Common& c, const ActivationArgs& a) {
  const auto m = load_manifest(a.manifest);
  auto model = load_model(a.checkpoint);
  const auto pairs = load_split(m, a.split);
  const auto table = export_activations(model, std::span<const FramePair>(pairs), infer_task(model), a.layer, a.batch, a.batches);
  fs::create_directories(c.out);
  write_text_file(fs::path(c.out) / "activations.tsv", table);
  std::cout << table.substr(0, table.find('\n')) << "\n";
  if (!a.filters_dir.empty()) std::cout << export_filters(model, a.filters_dir) << " filter images in " << a.filters_dir << "\n";
  write_stanza(sub, c);
  return 0;
}

/// Turns `key=value` lines of a config file into `--key=value` arguments.
std::vector<std::string> config_arguments(const std::string& path) {
  require_exists(path, "config file");
  std::vector<std::string> args;
  std::istringstream in(read_text_file(path));
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto body = std::string(detail::trim(line));
    if (body.empty() || body[0] == '#' || body[0] == '[') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) fail(ErrorKind::format, path + ":" + std::to_string(line_no) + ": expected key=value");
    auto key = std::string(detail::trim(std::string_view(body).substr(0, eq)));
    auto value = std::string(detail::trim(std::string_view(body).substr(eq + 1)));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (value.empty()) continue;
    std::replace(key.begin(), key.end(), '_', '-');
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  // Config-file entries go right after the subcommand so explicit flags, which
  // come later, take precedence.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) {
        path = args[i + 1];
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      } else if (args[i].rfind("--config=", 0) == 0) {
        path = args[i].substr(9);
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        continue;
      }
      const auto extra = config_arguments(path);
      const auto sub = std::find_if(args.begin(), args.end(), [](const std::string& s) { return !s.empty() && s[0] != '-'; });
      args.insert(sub == args.end() ? sub : sub + 1, extra.begin(), extra.end());
      break;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  }

  CLI::App app{"Train, evaluate and inspect CNN driving controllers"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.footer("Any option can also come from --config FILE holding key=value lines; explicit flags win.");

  Common common;

  PrepArgs prep;
  auto* prep_cmd = app.add_subcommand("prep", "Parse, scale, pair and split a corpus into a manifest");
  add_common(prep_cmd, common);
  prep_cmd->add_option("--telemetry", prep.telemetry, "Telemetry CSV");
  prep_cmd->add_option("--frames", prep.frames, "Frame directory holding frame_NNNNNN.ppm and index.csv");
  prep_cmd->add_option("--crop", prep.crop, "'center' or x,y,width,height")->capture_default_str();
  prep_cmd->add_option("--size", prep.size, "Network input size in pixels (default 256, or the synthetic frame size)");
  prep_cmd->add_option("--synth", prep.synth, "Generate a synthetic corpus first: n=<count>[,size=<px>]");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a manifest's train split");
  add_common(train_cmd, common);
  train_cmd->add_option("--manifest", tr.manifest, "Manifest from prep")->required();
  train_cmd->add_option("--checkpoint", tr.checkpoint, "Checkpoint to write (default <out>/model.fspt)");
  train_cmd->add_option("--resume", tr.resume, "Continue training from this checkpoint");
  add_model_options(train_cmd, tr.model);
  add_train_options(train_cmd, tr);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest from prep")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
  eval_cmd->add_option("--split", ev.split, "train, validation or test")->capture_default_str();
  eval_cmd->add_option("--batch", ev.batch, "Batch size")->capture_default_str();

  GridArgs grid;
  grid.train.model = {"4CL-3FC", "real"};
  auto* grid_cmd = app.add_subcommand("gridsearch", "Train one model per filter/stride configuration");
  add_common(grid_cmd, common);
  grid_cmd->add_option("--manifest", grid.manifest, "Manifest from prep")->required();
  grid_cmd->add_option("--arch", grid.train.model.arch, "Real-value architecture")->capture_default_str();
  grid_cmd->add_option("--task", grid.train.model.task, "real or brake_throttle")->capture_default_str();
  grid_cmd->add_option("--filter-sets", grid.filter_sets, "Double-compressed kernel sets, ';'-separated")->capture_default_str();
  grid_cmd->add_option("--stride-sets", grid.stride_sets, "Double-compressed stride sets, ';'-separated")->capture_default_str();
  grid_cmd->add_option("--threads", grid.threads, "Concurrent training runs")->capture_default_str();
  add_train_options(grid_cmd, grid.train);

  AugmentArgs aug;
  auto* aug_cmd = app.add_subcommand("augment", "Build shifted and mixed evaluation sets, optionally scoring a checkpoint");
  add_common(aug_cmd, common);
  aug_cmd->add_option("--manifest", aug.manifest, "Manifest from prep")->required();
  aug_cmd->add_option("--checkpoint", aug.checkpoint, "Checkpoint to evaluate on normal, shifted and mixed sets");
  aug_cmd->add_option("--split", aug.split, "Source split")->capture_default_str();
  aug_cmd->add_option("--k", aug.k, "Steering correction in degrees per pixel of shift")->capture_default_str();
  aug_cmd->add_option("--shift-range", aug.shift_range, "Shifts are drawn uniformly from [-range, range] pixels")->capture_default_str();
  aug_cmd->add_option("--size", aug.size, "Mixed set size (default: split size)");
  aug_cmd->add_option("--batch", aug.batch, "Evaluation batch size")->capture_default_str();
  aug_cmd->add_flag("--write-frames", aug.write_frames, "Also write the mixed set's frames");

  RenderArgs rn;
  auto* render_cmd = app.add_subcommand("render", "Write overlay frames sim_000001.ppm onward");
  add_common(render_cmd, common);
  render_cmd->add_option("--manifest", rn.manifest, "Manifest from prep")->required();
  render_cmd->add_option("--checkpoint", rn.checkpoint, "Checkpoint whose predictions are drawn in amber");
  render_cmd->add_option("--split", rn.split, "Source split, rendered in frame order")->capture_default_str();
  render_cmd->add_option("--limit", rn.limit, "Render at most this many frames");

  BenchArgs bn;
  auto* bench_cmd = app.add_subcommand("bench", "Per-layer and end-to-end forward latency");
  add_common(bench_cmd, common);
  bench_cmd->add_option("--checkpoint", bn.checkpoint, "Benchmark this checkpoint instead of a fresh model");
  add_model_options(bench_cmd, bn.model);
  bench_cmd->add_option("--size", bn.size, "Input frame size")->capture_default_str();
  bench_cmd->add_option("--warmup", bn.warmup, "Untimed warmup iterations")->capture_default_str();
  bench_cmd->add_option("--iters", bn.iters, "Timed iterations")->capture_default_str();
  bench_cmd->add_option("--batch", bn.batch, "Frames per forward")->capture_default_str();

  ActivationArgs act;
  auto* act_cmd = app.add_subcommand("activations", "Export hidden activations (and optionally conv filters)");
  add_common(act_cmd, common);
  act_cmd->add_option("--manifest", act.manifest, "Manifest from prep")->required();
  act_cmd->add_option("--checkpoint", act.checkpoint, "Checkpoint")->required();
  act_cmd->add_option("--split", act.split, "Source split")->capture_default_str();
  act_cmd->add_option("--layer", act.layer, "Node to export (default: last hidden FC)");
  act_cmd->add_option("--batch", act.batch, "Batch size")->capture_default_str();
  act_cmd->add_option("--batches", act.batches, "Export at most this many batches (0 = all)");
  act_cmd->add_option("--filters-dir", act.filters_dir, "Also write every conv filter slice as PGM here");

  std::vector<const char*> cargv{argv[0]};
  for (const auto& s : args) cargv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageExit;
  }

  try {
    if (*prep_cmd) return cmd_prep(prep_cmd, common, prep);
    if (*train_cmd) return cmd_train(train_cmd, common, tr);
    if (*eval_cmd) return cmd_eval(eval_cmd, common, ev);
    if (*grid_cmd) return cmd_gridsearch(grid_cmd, common, grid);
    if (*aug_cmd) return cmd_augment(aug_cmd, common, aug);
    if (*render_cmd) return cmd_render(render_cmd, common, rn);
    if (*bench_cmd) return cmd_bench(bench_cmd, common, bn);
    if (*act_cmd) return cmd_activations(act_cmd, common, act);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::io);
  }
  return 1;
}
