#include "crnet/commands.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "crnet/analysis.hpp"
#include "crnet/pretrain.hpp"
#include "crnet/trainer.hpp"

namespace crnet {

namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  return out;
}

void say(const CommandContext& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << std::endl;
}

/// Fresh state, or the checkpoint's state after checking that its model
/// sections match the run config. Optimizer settings come from the run
/// config; the stored optimizer slots are kept.
TrainState resolve_state(const CommandContext& ctx, bool required) {
  if (!ctx.checkpoint) {
    if (required) throw std::invalid_argument("this command needs --checkpoint");
    return initial_state(ctx.config);
  }
  LoadedCheckpoint loaded = load_checkpoint(*ctx.checkpoint);
  const auto stored = to_json(loaded.config), wanted = to_json(ctx.config);
  for (const char* section : {"embedding", "encoder", "decoder", "relation"}) {
    if (stored[section] != wanted[section]) {
      throw std::invalid_argument("checkpoint " + ctx.checkpoint->string() + " was built with a different '" +
                                  section + "' section than the run config");
    }
  }
  OptimizerState opt = loaded.state.optimizer.state();
  loaded.state.optimizer = Optimizer(ctx.config.optimizer);
  loaded.state.optimizer.set_state(std::move(opt));
  return std::move(loaded.state);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

DatasetBundle load_data(const RunConfig& config) {
  if (!config.paths.data_dir.empty()) {
    if (!fs::exists(fs::path(config.paths.data_dir) / "manifest.txt")) {
      throw std::invalid_argument("no dataset manifest under '" + config.paths.data_dir + "'");
    }
    DatasetBundle b = load_dataset(config.paths.data_dir);
    if (b.shape != config.embedding.input) {
      throw std::invalid_argument("dataset images are " + std::to_string(b.shape.channels) + "x" +
                                  std::to_string(b.shape.height) + "x" + std::to_string(b.shape.width) +
                                  " but embedding.input differs");
    }
    return b;
  }
  return make_synthetic_bundle(config.synthetic);
}

std::map<std::string, std::string> output_metadata(const RunConfig& config, const std::string& command) {
  return {{"command", command}, {"seed", std::to_string(config.seed)}, {"config_hash", config_hash(config)}};
}

fs::path cmd_generate(const CommandContext& ctx) {
  const fs::path root = ctx.config.paths.data_dir.empty() ? ctx.out_dir / "data" : fs::path(ctx.config.paths.data_dir);
  const DatasetBundle bundle = make_synthetic_bundle(ctx.config.synthetic);
  save_dataset(bundle, root);
  say(ctx, "wrote " + std::to_string(bundle.train.num_classes()) + "/" + std::to_string(bundle.val.num_classes()) +
               "/" + std::to_string(bundle.test.num_classes()) + " train/val/test classes to " + root.string());
  return root;
}

fs::path cmd_pretrain(const CommandContext& ctx) {
  const DatasetBundle data = load_data(ctx.config);
  TrainState state = resolve_state(ctx, false);
  const std::vector<double> acc = pretrain(data.train, state.model.embedding(), state.model.params(), ctx.config.pretrain);
  auto log = open_output(ctx.out_dir / "pretrain_log.csv");
  write_csv_preamble(log, output_metadata(ctx.config, "pretrain"), "epoch,accuracy");
  log << std::setprecision(17);
  for (std::size_t e = 0; e < acc.size(); ++e) log << e << "," << acc[e] << "\n";
  const fs::path ckpt = ctx.out_dir / "pretrain.ckpt";
  save_checkpoint(state, ctx.config, ckpt);
  say(ctx, "pretrain: " + std::to_string(acc.size()) + " epochs" +
               (acc.empty() ? std::string() : ", final accuracy " + fixed(acc.back())) + " -> " + ckpt.string());
  return ckpt;
}

fs::path cmd_train(const CommandContext& ctx) {
  const DatasetBundle data = load_data(ctx.config);
  TrainState state = resolve_state(ctx, false);
  TrainConfig tc;
  tc.episode = ctx.config.episode;
  tc.weights = ctx.config.loss;
  tc.val_every = ctx.config.training.val_every;
  tc.val_tasks = ctx.config.training.val_tasks;
  tc.seed = ctx.config.seed;

  auto log = open_output(ctx.out_dir / "train_log.csv");
  write_csv_preamble(log, output_metadata(ctx.config, "train"),
                     "episode,task,euclidean,relation,regularization,total,accuracy_euclidean,accuracy_relation");
  log << std::setprecision(17);
  TrainCallbacks cb;
  cb.on_task = [&](const TaskLog& t) {
    log << t.episode << "," << t.task << "," << t.euclidean << "," << t.relation << "," << t.regularization << ","
        << t.total << "," << t.accuracy_euclidean << "," << t.accuracy_relation << "\n";
    if (ctx.log && (t.episode + 1) % 100 == 0 && t.task + 1 == tc.episode.tasks_per_episode) {
      say(ctx, "episode " + std::to_string(t.episode + 1) + " loss " + fixed(t.total) + " running acc " +
                   fixed(state.metrics.mean_accuracy_euclidean) + "/" + fixed(state.metrics.mean_accuracy_relation));
    }
  };
  cb.on_best = [&](const TrainState& s, double acc) {
    save_checkpoint(s, ctx.config, ctx.out_dir / "best.ckpt");
    say(ctx, "validation accuracy " + fixed(acc) + " at episode " + std::to_string(s.episode) + " (best)");
  };
  cb.on_abort = [&](const TrainState& s) {
    save_checkpoint(s, ctx.config, ctx.out_dir / "abort.ckpt");
    say(ctx, "non-finite value; state saved to " + (ctx.out_dir / "abort.ckpt").string());
  };
  train(data.train, data.val.num_classes() >= tc.episode.ways ? &data.val : nullptr, tc, state, cb);
  const fs::path ckpt = ctx.out_dir / "train.ckpt";
  save_checkpoint(state, ctx.config, ckpt);
  say(ctx, "train: " + std::to_string(state.episode) + " episodes in total -> " + ckpt.string());
  return ckpt;
}

EvalReport cmd_eval(const CommandContext& ctx) {
  const DatasetBundle data = load_data(ctx.config);
  const TrainState state = resolve_state(ctx, true);
  EvalConfig ec;
  ec.episode = ctx.config.episode;
  ec.num_tasks = ctx.config.eval.num_tasks;
  ec.head = metric_head_from_string(ctx.config.eval.head);
  ec.seed = ctx.config.seed;
  ec.threads = ctx.config.eval.threads;
  const EvalReport r = evaluate(data.test, state.model, ec);

  const auto meta = output_metadata(ctx.config, "eval");
  auto summary = open_output(ctx.out_dir / "eval.csv");
  write_csv_preamble(summary, meta, "head,mean,ci95,num_tasks");
  summary << std::setprecision(17);
  const std::pair<const char*, const AccuracyStat*> rows[] = {
      {"euclidean", &r.euclidean}, {"relation", &r.relation}, {"prototype", &r.prototype}};
  for (const auto& [name, stat] : rows) {
    if (stat->per_task.empty()) continue;
    summary << name << "," << stat->mean << "," << stat->ci95 << "," << r.num_tasks << "\n";
    say(ctx, std::string(name) + ": " + fixed(100 * stat->mean, 2) + "% +- " + fixed(100 * stat->ci95, 2) + "% (" +
                 std::to_string(ec.episode.ways) + "-way " + std::to_string(ec.episode.shots) + "-shot, " +
                 std::to_string(r.num_tasks) + " tasks, " + std::to_string(ec.episode.queries_per_class) +
                 " queries/class)");
  }
  auto tasks = open_output(ctx.out_dir / "eval_tasks.csv");
  write_csv_preamble(tasks, meta, "task_index,euclidean,relation,prototype");
  tasks << std::setprecision(17);
  for (std::size_t i = 0; i < r.num_tasks; ++i) {
    const auto at = [i](const AccuracyStat& s) { return s.per_task.empty() ? std::string() : fixed(s.per_task[i], 17); };
    tasks << i << "," << at(r.euclidean) << "," << at(r.relation) << "," << at(r.prototype) << "\n";
  }
  return r;
}

std::size_t cmd_metashift(const CommandContext& ctx) {
  const DatasetBundle data = load_data(ctx.config);
  const TrainState state = resolve_state(ctx, true);
  const auto& a = ctx.config.analysis;
  auto meta = output_metadata(ctx.config, "metashift");
  auto summary = open_output(ctx.out_dir / "metashift_summary.csv");
  write_csv_preamble(summary, meta, "class,source,mean,std");
  summary << std::setprecision(17);
  std::size_t decoded_wins = 0;
  for (std::size_t c = 0; c < data.test.num_classes(); ++c) {
    const std::string& name = data.test.classes[c].name;
    const MetaShiftReport dec = meta_shift(data.test, c, a.metashift_shots, a.metashift_tests,
                                           decoded_descriptor_fn(state.model), ctx.config.seed, DescriptorSource::Decoded);
    const MetaShiftReport pro = meta_shift(data.test, c, a.metashift_shots, a.metashift_tests,
                                           prototype_descriptor_fn(state.model), ctx.config.seed,
                                           DescriptorSource::MeanPrototype);
    for (const MetaShiftReport* r : {&dec, &pro}) {
      auto m = meta;
      m["class"] = name;
      auto out = open_output(ctx.out_dir / "metashift" / (name + "_" + to_string(r->source) + ".csv"));
      write_metashift_csv(out, *r, m);
      summary << name << "," << to_string(r->source) << "," << r->mean << "," << r->std << "\n";
    }
    decoded_wins += dec.mean < pro.mean;
    say(ctx, name + ": decoded " + fixed(dec.mean) + " prototype " + fixed(pro.mean));
  }
  say(ctx, "decoded descriptor more stable on " + std::to_string(decoded_wins) + "/" +
               std::to_string(data.test.num_classes()) + " classes");
  return decoded_wins;
}

fs::path cmd_fid(const CommandContext& ctx) {
  const DatasetBundle data = load_data(ctx.config);
  const TrainState state = resolve_state(ctx, true);
  const double jitter = 1e-6;
  const auto fid = fid_protocol(data.test, state.model, ctx.config.analysis.fid_tests, ctx.config.episode,
                                ctx.config.seed, jitter);
  auto meta = output_metadata(ctx.config, "fid");
  meta["jitter"] = "1e-06";
  const fs::path file = ctx.out_dir / "fid.csv";
  auto out = open_output(file);
  write_fid_csv(out, fid, meta);
  double mean = 0.0;
  for (double f : fid) mean += f / static_cast<double>(fid.size());
  say(ctx, "fid: " + std::to_string(fid.size()) + " tests, mean " + fixed(mean) + " -> " + file.string());
  return file;
}

fs::path cmd_export(const CommandContext& ctx) {
  const DatasetBundle data = load_data(ctx.config);
  const TrainState state = resolve_state(ctx, true);
  const auto rows =
      export_embeddings(data.test, state.model, ctx.config.analysis.export_samples_per_class, ctx.config.seed);
  const fs::path file = ctx.out_dir / "embeddings.csv";
  auto out = open_output(file);
  write_embeddings_csv(out, rows, state.model.feature_dim(), output_metadata(ctx.config, "export"));
  say(ctx, "export: " + std::to_string(rows.size()) + " rows -> " + file.string());
  return file;
}

fs::path cmd_sweep_basis(const CommandContext& ctx) {
  const DatasetBundle data = load_data(ctx.config);
  std::optional<TrainState> warm;
  if (ctx.checkpoint) warm.emplace(resolve_state(ctx, true));

  const fs::path file = ctx.out_dir / "sweep_basis.csv";
  auto out = open_output(file);
  write_csv_preamble(out, output_metadata(ctx.config, "sweep-basis"),
                     "num_bases,euclidean,euclidean_ci95,relation,relation_ci95");
  out << std::setprecision(17);
  for (std::size_t n : ctx.config.analysis.sweep_bases) {
    RunConfig cfg = ctx.config;
    cfg.encoder.num_bases = n;
    TrainState state = initial_state(cfg);
    if (warm) {
      // Start every N from the same embedding.
      for (auto& [name, entry] : state.model.params())
        if (name.rfind("embed.", 0) == 0) {
          auto src = warm->model.params().at(name).values();
          std::copy(src.begin(), src.end(), entry.value.mutable_values().begin());
        }
      for (auto& [name, buf] : state.model.buffers())
        if (name.rfind("embed.", 0) == 0) {
          auto src = warm->model.buffers().at(name).values();
          std::copy(src.begin(), src.end(), buf.mutable_values().begin());
        }
    }
    TrainConfig tc;
    tc.episode = cfg.episode;
    tc.weights = cfg.loss;
    tc.seed = cfg.seed;
    train(data.train, nullptr, tc, state);
    save_checkpoint(state, cfg, ctx.out_dir / "sweep" / ("bases_" + std::to_string(n) + ".ckpt"));
    EvalConfig ec;
    ec.episode = cfg.episode;
    ec.num_tasks = cfg.eval.num_tasks;
    ec.seed = cfg.seed;
    ec.threads = cfg.eval.threads;
    const EvalReport r = evaluate(data.test, state.model, ec);
    out << n << "," << r.euclidean.mean << "," << r.euclidean.ci95 << "," << r.relation.mean << "," << r.relation.ci95
        << "\n";
    say(ctx, "N=" + std::to_string(n) + ": " + fixed(r.euclidean.mean) + " / " + fixed(r.relation.mean));
  }
  return file;
}

}  // namespace crnet
