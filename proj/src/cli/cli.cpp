#include "bce/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "bce/core/png_io.hpp"
#include "bce/core/rng.hpp"
#include "bce/pipeline/checkpoint.hpp"
#include "bce/pipeline/plot.hpp"

namespace bce::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  int workers = 1;
};

Settings resolve(const Common& c) {
  Settings s;
  if (!c.config.empty()) apply_config_file(s, c.config);
  for (const auto& o : c.overrides) apply_override(s, o);
  if (c.seed) s.seed = *c.seed;
  s.train.workers = c.workers;
  s.train.deterministic = c.deterministic;
  finalize(s);
  return s;
}

std::map<std::string, fs::path> png_stems(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw DataError(std::string(what) + " directory '" + dir.string() + "' not found");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
  }
  return out;
}

bool same_location(const fs::path& a, const fs::path& b) {
  std::error_code ec;
  return fs::weakly_canonical(a, ec) == fs::weakly_canonical(b, ec);
}

// ---------------------------------------------------------------------------------------------

struct ConvertArgs {
  std::string t2, t1_mask, change, out, split = "train";
  double resolution = 0.0;
};

int do_convert(const ConvertArgs& a, std::ostream& out) {
  const auto images = png_stems(a.t2, "--t2");
  const auto masks = png_stems(a.t1_mask, "--t1-mask");
  const auto changes = png_stems(a.change, "--change");
  const data::Split split = data::parse_split(a.split);
  std::set<std::string> ids;
  for (const auto* m : {&images, &masks, &changes}) {
    for (const auto& kv : *m) ids.insert(kv.first);
  }
  if (ids.empty()) throw DataError("no PNG tiles found under --t2/--t1-mask/--change");

  std::vector<data::DatasetEntry> entries;
  if (fs::exists(fs::path(a.out) / "manifest.json")) entries = data::read_dataset(a.out);
  std::set<std::string> existing;
  for (const auto& e : entries) existing.insert(e.sample.tile_id());

  for (const auto& id : ids) {
    const std::pair<const char*, const std::map<std::string, fs::path>*> parts[] = {
        {"image (--t2)", &images}, {"historical mask (--t1-mask)", &masks}, {"change mask (--change)", &changes}};
    for (const auto& [name, m] : parts) {
      if (!m->contains(id)) throw DataError("tile '" + id + "': missing " + name);
    }
    if (existing.contains(id)) throw DataError("tile '" + id + "' already exists in '" + a.out + "'");
    const ImageTile image = load_image(images.at(id), id, a.resolution);
    const HistoricalMask mask = load_mask(masks.at(id), true);
    ByteRaster change = read_png(changes.at(id));
    if (change.channels() != 1) throw DataError("tile '" + id + "': change mask must be single-channel");
    for (auto& v : change.data()) v = v != 0;
    entries.push_back({data::convert_bitemporal(image, mask, change), split});
  }
  data::write_dataset(entries, a.out);
  out << "converted " << ids.size() << " tiles into " << a.out << " (" << a.split << ")\n";
  return kExitOk;
}

struct SimulateArgs {
  std::string data, out, split = "train";
};

int do_simulate(const SimulateArgs& a, const Settings& s, std::ostream& out) {
  if (same_location(a.data, a.out)) throw UsageError("simulate: --out must differ from --data");
  auto entries = data::read_dataset(a.data);
  const bool all = a.split == "all";
  const data::Split split = all ? data::Split::train : data::parse_split(a.split);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!all && entries[i].split != split) continue;
    data::RsgParams p = s.rsg;
    p.seed = derive_seed(s.seed, {0x53494d, i});
    entries[i].sample = data::simulate_changes(entries[i].sample, p);
    ++changed;
  }
  data::write_dataset(entries, a.out);
  out << "simulated changes on " << changed << " of " << entries.size() << " tiles into " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data, out, eval_split = "test";
};

int do_train(const TrainArgs& a, const Settings& s, std::ostream& out, std::ostream& err) {
  const auto entries = data::read_dataset(a.data);
  const auto train_set = data::select_split(entries, data::Split::train);
  auto eval_set = data::select_split(entries, data::parse_split(a.eval_split));
  if (eval_set.empty()) {
    err << "note: split '" << a.eval_split << "' is empty, evaluating on the training split\n";
    eval_set = train_set;
  }
  nn::BceNet model(s.model);
  pipeline::apply_pretrained(model);
  const pipeline::TrainOutputs outputs{a.out};
  fs::create_directories(outputs.dir);
  {
    std::ofstream cfg(outputs.dir / "config.json");
    cfg << to_json(s).dump(2) << "\n";
  }
  const auto result = pipeline::train(model, train_set, eval_set, s.train, s.loss,
                                      s.use_rsg ? std::optional(s.rsg) : std::nullopt, outputs);
  out << "steps " << result.state.step << ", best eval F1 " << result.state.best_f1 << " at step "
      << result.state.best_step << "\n";
  out << "last checkpoint " << outputs.last_path().string() << " sha256 "
      << pipeline::file_digest(outputs.last_path()) << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string data, checkpoint, split = "test", out, pred_dir;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void csv_row(std::ostream& os, const std::string& id, const pipeline::Metrics& m) {
  os << id << "," << fmt(m.precision) << "," << fmt(m.recall) << "," << fmt(m.f1) << "," << fmt(m.iou) << "\n";
}

void csv_rows(std::ostream& os, const std::string& id, const pipeline::Evaluation& e) {
  if (e.mode == pipeline::EvalMode::binary_change) {
    csv_row(os, id, e.change);
  } else {
    csv_row(os, id + ":new", e.added);
    csv_row(os, id + ":removed", e.removed);
  }
}

int do_eval(const EvalArgs& a, const Settings& s, std::ostream& out) {
  auto model = pipeline::load_model(a.checkpoint);
  const auto samples = data::select_split(data::read_dataset(a.data), data::parse_split(a.split));
  if (samples.empty()) throw DataError("split '" + a.split + "' of '" + a.data + "' is empty");
  std::ofstream file;
  if (!a.out.empty()) {
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    file.open(a.out);
    if (!file) throw DataError("cannot write '" + a.out + "'");
  }
  std::ostream& csv = a.out.empty() ? out : file;
  csv << "tile_id,precision,recall,f1,iou\n";
  pipeline::EvalCounts total;
  for (const auto& sample : samples) {
    const auto result = pipeline::infer(model, sample.image, sample.mask, s.infer);
    if (!a.pred_dir.empty()) pipeline::write_change_result(result, fs::path(a.pred_dir) / (sample.tile_id() + ".png"));
    const auto counts = pipeline::count_tile(result, sample.label);
    total += counts;
    csv_rows(csv, sample.tile_id(), pipeline::evaluate(counts, s.eval_mode));
  }
  csv_rows(csv, "ALL", pipeline::evaluate(total, s.eval_mode));
  if (!a.out.empty()) {
    const auto e = pipeline::evaluate(total, s.eval_mode);
    out << samples.size() << " tiles, change F1 " << fmt(e.change.f1) << ", IoU " << fmt(e.change.iou)
        << " (" << pipeline::to_string(s.eval_mode) << " written to " << a.out << ")\n";
  }
  return kExitOk;
}

struct InferArgs {
  std::string image, mask, checkpoint, out;
};

int do_infer(const InferArgs& a, const Settings& s, std::ostream& out) {
  auto model = pipeline::load_model(a.checkpoint);
  const std::string id = fs::path(a.image).stem().string();
  const ImageTile image = load_image(a.image, id);
  const HistoricalMask mask = load_mask(a.mask, true);
  const auto result = pipeline::infer(model, image, mask, s.infer);
  pipeline::write_change_result(result, a.out);
  long long added = 0;
  for (auto v : result.new_mask.data()) added += v;
  out << id << ": " << result.removed_instance_ids.size() << " removed instances, " << added
      << " new-building pixels -> " << a.out << "\n";
  return kExitOk;
}

struct PlotArgs {
  std::string log, out;
};

int do_plot(const PlotArgs& a, std::ostream& out, std::ostream& err) {
  const auto log = pipeline::read_loss_log(a.log);
  if (log.skipped > 0) err << "warning: skipped " << log.skipped << " malformed log lines\n";
  const auto files = pipeline::plot_metrics(log, a.out);
  out << log.entries.size() << " steps -> " << files.csv.string() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Building change extraction from images and historical footprints", "bce"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "JSON file of flat dotted settings");
  app.add_option("--set", common.overrides, "override a setting, key=value (repeatable)");
  app.add_option("--seed", common.seed, "seed for every stochastic component");
  app.add_flag("--deterministic", common.deterministic, "bit-reproducible run");
  app.add_option("--workers", common.workers, "sample preparation threads")->check(CLI::PositiveNumber);

  ConvertArgs conv;
  auto* c_convert = app.add_subcommand("convert", "bi-temporal tiles to a single-temporal dataset");
  c_convert->add_option("--t2", conv.t2, "directory of later-epoch images")->required();
  c_convert->add_option("--t1-mask", conv.t1_mask, "directory of historical masks")->required();
  c_convert->add_option("--change", conv.change, "directory of change masks")->required();
  c_convert->add_option("--out", conv.out, "dataset root")->required();
  c_convert->add_option("--split", conv.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  c_convert->add_option("--resolution", conv.resolution, "ground resolution in metres");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "random change simulation over a dataset");
  c_sim->add_option("--data", sim.data, "input dataset root")->required();
  c_sim->add_option("--out", sim.out, "output dataset root")->required();
  c_sim->add_option("--split", sim.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a model");
  c_train->add_option("--data", tr.data, "dataset root")->required();
  c_train->add_option("--out", tr.out, "run directory")->required();
  c_train->add_option("--eval-split", tr.eval_split, "split used for model selection")
      ->check(CLI::IsMember({"train", "test"}));

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "pixel metrics of a checkpoint");
  c_eval->add_option("--data", ev.data, "dataset root")->required();
  c_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  c_eval->add_option("--split", ev.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  c_eval->add_option("--out", ev.out, "metrics CSV (default: stdout)");
  c_eval->add_option("--pred-dir", ev.pred_dir, "also write change rasters here");

  InferArgs inf;
  auto* c_infer = app.add_subcommand("infer", "change raster for one tile");
  c_infer->add_option("--image", inf.image, "RGB image PNG")->required();
  c_infer->add_option("--mask", inf.mask, "historical mask PNG")->required();
  c_infer->add_option("--checkpoint", inf.checkpoint, "checkpoint file")->required();
  c_infer->add_option("--out", inf.out, "output category PNG")->required();

  PlotArgs pl;
  auto* c_plot = app.add_subcommand("plot", "curves and tables from a loss log");
  c_plot->add_option("--log", pl.log, "loss_log.jsonl")->required();
  c_plot->add_option("--out", pl.out, "output directory")->required();

  for (auto* sub : {c_convert, c_sim, c_train, c_eval, c_infer, c_plot}) sub->fallthrough();

  std::vector<std::string> argv_store{"bce"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (c_convert->parsed()) return do_convert(conv, out);
    if (c_plot->parsed()) return do_plot(pl, out, err);
    const Settings s = resolve(common);
    if (c_sim->parsed()) return do_simulate(sim, s, out);
    if (c_train->parsed()) return do_train(tr, s, out, err);
    if (c_eval->parsed()) return do_eval(ev, s, out);
    if (c_infer->parsed()) return do_infer(inf, s, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace bce::cli
