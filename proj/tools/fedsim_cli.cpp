// fedsim: command-line front end for the federated learning simulator.
//
// Exit status: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsim/fedsim.hpp"

namespace fs = std::filesystem;
using namespace fedsim;

namespace {

// Command-line values that override keys of the JSON config.
struct Overrides {
  std::optional<double> C;
  std::optional<std::size_t> E, B, rounds, hidden_dim, epochs, patience;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> sampler, aggregator, optimizer, model;
  std::optional<double> lr;
  bool wall_time = false;

  void add_federation(CLI::App* app) {
    app->add_option("--C", C, "fraction of clients per round");
    app->add_option("--E", E, "local epochs");
    add_common(app);
    app->add_option("--rounds", rounds, "communication rounds");
    app->add_option("--sampler", sampler, "uniform | proportional");
    app->add_option("--aggregator", aggregator, "fedavg | stale");
    app->add_flag("--wall-time", wall_time, "record per-round wall time in the series table");
  }

  void add_common(CLI::App* app) {
    app->add_option("--B", B, "mini-batch size");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--optimizer", optimizer, "adam | sgd");
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--model", model, "linear | mlp");
    app->add_option("--hidden-dim", hidden_dim, "hidden units (mlp)");
  }

  void apply(Json& j) const {
    if (C) j["C"] = *C;
    if (E) j["E"] = *E;
    if (B) j["B"] = *B;
    if (rounds) j["rounds"] = *rounds;
    if (seed) j["seed"] = *seed;
    if (sampler) j["sampler"] = *sampler;
    if (aggregator) j["aggregator"] = *aggregator;
    if (wall_time) j["record_wall_time"] = true;
    if (optimizer) j["optimizer"]["kind"] = *optimizer;
    if (lr) j["optimizer"]["lr"] = *lr;
    if (model) j["model"]["kind"] = *model;
    if (hidden_dim) j["model"]["hidden_dim"] = *hidden_dim;
    if (epochs) j["central"]["epochs"] = *epochs;
    if (patience) j["central"]["patience"] = *patience;
  }
};

struct DataArgs {
  std::string config_path;
  std::string data_path;
  std::string out_dir;
};

void add_data_args(CLI::App* app, DataArgs& a) {
  app->add_option("--config", a.config_path, "JSON config (or a run manifest.json)");
  app->add_option("--data", a.data_path, "FSIM1 dataset (default: config key \"data\")");
  app->add_option("--out-dir", a.out_dir, "output directory")->required();
}

Json load_config(const DataArgs& a, const Overrides& o) {
  Json j = a.config_path.empty() ? Json::object() : load_json(a.config_path);
  o.apply(j);
  return j;
}

std::string data_path(const DataArgs& a, const Json& cfg) {
  if (!a.data_path.empty()) return a.data_path;
  if (cfg.contains("data") && cfg["data"].is_string()) return cfg["data"].get<std::string>();
  throw ValidationError("no dataset: pass --data or set \"data\" in the config");
}

FederatedTask open_task(const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("dataset '" + path + "' does not exist");
  return load_task(path);
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create '" + dir + "': " + ec.message());
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw RuntimeFailure("cannot write '" + p.string() + "'");
  return f;
}

// ---------------------------------------------------------------------------

struct PartitionArgs {
  std::string manifest;
  std::size_t min_clips = 100;
  std::string out;
};

int cmd_partition(const PartitionArgs& a) {
  const auto clips = ingest_metadata(a.manifest);
  const auto hist = uploader_histogram(clips);
  const auto parts = partition_by_uploader(clips, a.min_clips);
  std::size_t train = 0, held = 0;
  for (const auto& c : clips) train += c.split == Split::train;
  for (const auto& p : parts) held += p.n();
  std::printf("clips            %zu (train %zu)\n", clips.size(), train);
  std::printf("uploaders        %zu\n", hist.uploaders());
  std::printf("  1 clip         %zu\n", hist.one);
  std::printf("  2-10 clips     %zu\n", hist.two_to_ten);
  std::printf("  11-99 clips    %zu\n", hist.eleven_to_99);
  std::printf("  100+ clips     %zu\n", hist.hundred_plus);
  std::printf("  <= 10 clips    %zu\n", hist.at_most_ten());
  std::printf("clients (>= %zu) %zu\n", a.min_clips, parts.size());
  std::printf("client clips     %zu (%.2f%% of train)\n", held, train ? 100.0 * held / train : 0.0);
  if (!a.out.empty()) {
    auto f = open_out(a.out);
    f << "client_id,clip_id\n";
    for (const auto& p : parts)
      for (auto i : p.clips) f << detail::csv_escape(p.client_id) << ',' << detail::csv_escape(clips[i].clip_id) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config_path;
  std::string out;
  std::string manifest_out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> clients, classes, input_dim;
  std::optional<double> concentration, noise;
};

int cmd_synth(const SynthArgs& a) {
  Json j = a.config_path.empty() ? Json::object() : load_json(a.config_path);
  if (a.seed) j["synth"]["seed"] = *a.seed;
  if (a.clients) j["synth"]["num_clients"] = *a.clients;
  if (a.classes) j["synth"]["num_classes"] = *a.classes;
  if (a.input_dim) j["synth"]["input_dim"] = *a.input_dim;
  if (a.concentration) j["synth"]["concentration"] = *a.concentration;
  if (a.noise) j["synth"]["noise"] = *a.noise;
  const auto spec = synth_from_json(j);
  const auto st = synth_federated_task(spec);
  save_task(st.task, a.out);
  if (!a.manifest_out.empty()) {
    auto f = open_out(a.manifest_out);
    write_manifest(f, task_manifest(st.task));
  }
  std::size_t total = 0;
  for (const auto& c : st.task.clients) total += c.n();
  std::printf("wrote %s: %zu clients, %zu train examples, %zu eval examples, %zu classes, dim %zu\n",
              a.out.c_str(), st.task.clients.size(), total, st.task.eval.size(), st.task.classes.size(),
              st.task.input_dim());
  std::printf("fingerprint %s\n", hex64(task_fingerprint(st.task)).c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct FeaturesArgs {
  std::string wav;
  std::string manifest;
  std::string audio_dir;
  std::string out;
  std::size_t min_clips = 100;
  std::string eval_split = "val";
};

int cmd_features_wav(const FeaturesArgs& a) {
  const auto patches = clip_patches(read_wav(a.wav));
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!a.out.empty()) {
    file = open_out(a.out);
    out = &file;
  }
  for (std::size_t i = 0; i < patches.size(); ++i) {
    *out << "# patch " << i << ' ' << patches[i].rows() << 'x' << patches[i].cols() << '\n';
    write_patch_text(*out, patches[i]);
  }
  if (!a.out.empty()) std::printf("%zu patches written to %s\n", patches.size(), a.out.c_str());
  return 0;
}

// Builds a dataset from a clip manifest and a directory of <clip_id>.wav
// files: uploader clients from the train split, the eval split as clips.
int cmd_features_manifest(const FeaturesArgs& a) {
  if (a.out.empty()) throw ValidationError("features: --out is required with --manifest");
  const auto clips = ingest_metadata(a.manifest);
  const Split eval_split = parse_split(a.eval_split);
  const auto vocab = vocabulary(clips);
  auto patches_of = [&](const ClipRecord& c) {
    const fs::path wav = fs::path(a.audio_dir) / (c.clip_id + ".wav");
    if (!fs::exists(wav)) throw RuntimeFailure("missing audio '" + wav.string() + "'");
    return inherit_labels(c, vocab, clip_patches(read_wav(wav.string())));
  };

  FederatedTask task;
  task.classes = vocab;
  for (const auto& part : partition_by_uploader(clips, a.min_clips)) {
    std::vector<MelPatch> all;
    for (auto i : part.clips) {
      auto p = patches_of(clips[i]);
      all.insert(all.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
    task.clients.push_back({part.client_id, patches_to_batch(all)});
  }
  if (task.clients.empty()) throw ValidationError("features: no uploader reaches --min-clips");

  LabeledBatch eval;
  std::vector<std::uint32_t> groups;
  std::uint32_t gid = 0;
  for (const auto& c : clips) {
    if (c.split != eval_split) continue;
    const auto b = patches_to_batch(patches_of(c));
    for (std::size_t r = 0; r < b.size(); ++r) {
      eval.inputs.append_row(b.inputs.row(r));
      eval.targets.append_row(b.targets.row(r));
      groups.push_back(gid);
    }
    ++gid;
  }
  if (gid == 0) throw ValidationError("features: no clips in the '" + a.eval_split + "' split");
  task.eval = EvalSet(std::move(eval), std::move(groups));
  save_task(task, a.out);
  std::printf("wrote %s: %zu clients, %u eval clips, %zu classes\n", a.out.c_str(), task.clients.size(), gid,
              vocab.size());
  return 0;
}

// ---------------------------------------------------------------------------

RunManifest start_manifest(const std::string& run_id, Json cfg, const std::string& data,
                           const FederatedTask& task) {
  RunManifest m;
  m.run_id = run_id;
  m.config = std::move(cfg);
  m.data_path = data;
  m.data_fingerprint = task_fingerprint(task);
  m.started = utc_timestamp();
  return m;
}

int cmd_train_central(const DataArgs& a, const Overrides& o) {
  const Json j = load_config(a, o);
  const std::string data = data_path(a, j);
  const auto task = open_task(data);
  const auto cfg = central_from_json(j);
  const auto spec = model_from_json(j, task.input_dim(), task.classes.size());
  const auto dir = prepare_dir(a.out_dir);

  Json snapshot = to_json(cfg);
  snapshot["model"] = to_json(spec);
  auto manifest = start_manifest("central_s" + std::to_string(cfg.seed), snapshot, data, task);

  const auto res = train_central(cfg, spec, task.pooled(), task.eval);
  {
    auto f = open_out(dir / "epochs.csv");
    f << "epoch,train_loss,pr_auc,eval_loss\n";
    char buf[128];
    for (const auto& e : res.epochs) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.pr_auc, e.eval_loss);
      f << buf;
    }
  }
  save_params(res.best_params, (dir / "best.fsim").string());
  save_params(res.final_params, (dir / "final.fsim").string());
  manifest.finished = utc_timestamp();
  manifest.artifacts = {{"epochs", "epochs.csv"}, {"best", "best.fsim"}, {"final", "final.fsim"}};
  manifest.write((dir / "manifest.json").string());

  const auto& best = res.epochs[res.best_epoch - 1];
  std::printf("epochs %zu%s, best epoch %zu, pr_auc %.6f\n", res.epochs.size(),
              res.stopped_early ? " (early stop)" : "", res.best_epoch, best.pr_auc);
  return 0;
}

int cmd_train_fed(const DataArgs& a, const Overrides& o, std::size_t threads) {
  const Json j = load_config(a, o);
  const std::string data = data_path(a, j);
  const auto task = open_task(data);
  auto cfg = federation_from_json(j);
  cfg.threads = threads;
  const auto spec = model_from_json(j, task.input_dim(), task.classes.size());
  const auto dir = prepare_dir(a.out_dir);

  Json snapshot = to_json(cfg);
  snapshot["model"] = to_json(spec);
  const std::string run_id = make_run_id(cfg);
  auto manifest = start_manifest(run_id, snapshot, data, task);

  auto result = run_federation(cfg, task.clients, task.eval, spec, [](const RoundRecord& r, const ParameterVector&) {
    std::fprintf(stderr, "round %zu  pr_auc %.6f  mu_t %zu\n", r.t, r.eval_metrics.at("pr_auc"), r.mu_t);
  });
  const std::vector<RunRecord> runs{{run_id, cfg, std::move(result.rounds), ""}};
  emit_report(runs, (dir / "series.csv").string(), (dir / "summary.csv").string());
  save_params(result.final_params, (dir / "final.fsim").string());
  manifest.finished = utc_timestamp();
  manifest.artifacts = {{"series", "series.csv"}, {"summary", "summary.csv"}, {"final", "final.fsim"}};
  manifest.write((dir / "manifest.json").string());

  const auto s = summarize(runs[0].rounds);
  std::printf("%s: max pr_auc %.6f (round %zu), mean %.6f\n", run_id.c_str(), s.max_pr_auc, s.best_round,
              s.mean_pr_auc);
  return 0;
}

int cmd_grid(const DataArgs& a, const Overrides& o, std::size_t workers) {
  const Json j = load_config(a, o);
  const std::string data = data_path(a, j);
  const auto task = open_task(data);
  const auto base = federation_from_json(j);
  const auto grid = grid_from_json(j);
  const auto spec = model_from_json(j, task.input_dim(), task.classes.size());
  const auto dir = prepare_dir(a.out_dir);

  Json snapshot = to_json(base);
  snapshot["model"] = to_json(spec);
  snapshot["grid"] = to_json(grid);
  auto manifest = start_manifest("grid", snapshot, data, task);

  const auto runs = grid_search(grid, base, task, spec, workers);
  emit_report(runs, (dir / "series.csv").string(), (dir / "summary.csv").string());
  manifest.finished = utc_timestamp();
  manifest.artifacts = {{"series", "series.csv"}, {"summary", "summary.csv"}};
  std::size_t failed = 0;
  for (const auto& r : runs)
    if (!r.ok()) {
      ++failed;
      manifest.artifacts["failed"][r.run_id] = r.error;
      std::fprintf(stderr, "cell %s failed: %s\n", r.run_id.c_str(), r.error.c_str());
    }
  manifest.write((dir / "manifest.json").string());
  std::printf("%zu cells, %zu failed; reports in %s\n", runs.size(), failed, dir.string().c_str());
  return failed == runs.size() ? 2 : 0;
}

// ---------------------------------------------------------------------------

int cmd_report(const std::string& series, const std::string& out) {
  std::ifstream in(series);
  if (!in) throw ValidationError("cannot open series table '" + series + "'");
  const auto runs = read_series(in);
  if (runs.empty()) throw ValidationError("series table '" + series + "' has no rows");
  if (out.empty()) {
    write_summary(std::cout, runs);
  } else {
    auto f = open_out(out);
    write_summary(f, runs);
  }
  return 0;
}

int cmd_prob(std::size_t n, double c, std::size_t r) {
  const double prob = selection_probability(n, c, r);
  std::printf("cohort %zu of %zu per round\n", cohort_size(n, c), n);
  std::printf("%.17g\n", prob);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedsim: deterministic federated averaging simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fedsim 1.0.0");

  PartitionArgs part;
  auto* p = app.add_subcommand("partition", "uploader histogram and client partition of a clip manifest");
  p->add_option("--manifest", part.manifest, "clip manifest CSV")->required();
  p->add_option("--min-clips", part.min_clips, "minimum train clips per client")->capture_default_str();
  p->add_option("--out", part.out, "write client_id,clip_id assignments");

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "generate a synthetic non-IID federated task");
  s->add_option("--config", syn.config_path, "JSON config with a \"synth\" object");
  s->add_option("--out", syn.out, "output FSIM1 dataset")->required();
  s->add_option("--manifest-out", syn.manifest_out, "also write a clip manifest CSV");
  s->add_option("--seed", syn.seed, "generator seed");
  s->add_option("--clients", syn.clients, "number of clients");
  s->add_option("--classes", syn.classes, "number of classes");
  s->add_option("--input-dim", syn.input_dim, "feature dimension");
  s->add_option("--concentration", syn.concentration, "Dirichlet label-skew concentration");
  s->add_option("--noise", syn.noise, "input noise standard deviation");

  FeaturesArgs feat;
  auto* f = app.add_subcommand("features", "log-mel patches from WAV audio");
  auto* f_wav = f->add_option("--wav", feat.wav, "single 22050 Hz WAV file; patches as text");
  auto* f_man = f->add_option("--manifest", feat.manifest, "clip manifest; builds an FSIM1 dataset");
  f_wav->excludes(f_man);
  f->add_option("--audio-dir", feat.audio_dir, "directory of <clip_id>.wav files")->needs(f_man);
  f->add_option("--out", feat.out, "output file");
  f->add_option("--min-clips", feat.min_clips, "minimum train clips per client")->capture_default_str();
  f->add_option("--eval-split", feat.eval_split, "split used for evaluation")->capture_default_str();

  DataArgs central_args;
  Overrides central_o;
  auto* tc = app.add_subcommand("train-central", "centralized baseline with early stopping");
  add_data_args(tc, central_args);
  central_o.add_common(tc);
  tc->add_option("--epochs", central_o.epochs, "maximum epochs");
  tc->add_option("--patience", central_o.patience, "early-stopping patience");

  DataArgs fed_args;
  Overrides fed_o;
  std::size_t threads = 0;
  auto* tf = app.add_subcommand("train-fed", "one federated run");
  add_data_args(tf, fed_args);
  fed_o.add_federation(tf);
  tf->add_option("--threads", threads, "client worker threads (0: FSIM_THREADS or 1)");

  DataArgs grid_args;
  Overrides grid_o;
  std::size_t workers = 0;
  auto* g = app.add_subcommand("grid", "C x E grid search");
  add_data_args(g, grid_args);
  grid_o.add_federation(g);
  g->add_option("--workers", workers, "cells run concurrently (0: FSIM_THREADS or 1)");

  std::string series, report_out;
  auto* r = app.add_subcommand("report", "summary table from a round-series table");
  r->add_option("--series", series, "round-series CSV")->required();
  r->add_option("--out", report_out, "summary CSV (default: stdout)");

  std::size_t prob_n = 0, prob_r = 0;
  double prob_c = 0.0;
  auto* pr = app.add_subcommand("prob", "probability a client is selected at least once");
  pr->add_option("--N", prob_n, "number of clients")->required();
  pr->add_option("--C", prob_c, "fraction selected per round")->required();
  pr->add_option("--R", prob_r, "rounds")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*p) return cmd_partition(part);
    if (*s) return cmd_synth(syn);
    if (*f) {
      if (!feat.wav.empty()) return cmd_features_wav(feat);
      if (!feat.manifest.empty()) return cmd_features_manifest(feat);
      throw ValidationError("features: pass --wav or --manifest");
    }
    if (*tc) return cmd_train_central(central_args, central_o);
    if (*tf) return cmd_train_fed(fed_args, fed_o, threads);
    if (*g) return cmd_grid(grid_args, grid_o, workers);
    if (*r) return cmd_report(series, report_out);
    if (*pr) return cmd_prob(prob_n, prob_c, prob_r);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 2;
  }
  return 1;
}
