// crnet: generate / pretrain / train / eval / metashift / fid / export / sweep-basis

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "crnet/commands.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out_dir;
  std::optional<std::size_t> num_tasks;
  std::optional<std::size_t> threads;
};

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

/// Precedence: flag > environment (out dir, threads only) > config file > defaults.
crnet::CommandContext make_context(const Options& o) {
  crnet::CommandContext ctx;
  ctx.config = o.config.empty() ? crnet::RunConfig{} : crnet::load_config(o.config);
  if (o.seed) ctx.config.seed = *o.seed;
  if (o.num_tasks) {
    ctx.config.eval.num_tasks = *o.num_tasks;
    ctx.config.analysis.metashift_tests = *o.num_tasks;
    ctx.config.analysis.fid_tests = *o.num_tasks;
  }
  if (auto t = env("CRNET_THREADS")) {
    try {
      ctx.config.eval.threads = std::stoul(*t);
    } catch (const std::exception&) {
      throw std::invalid_argument("CRNET_THREADS must be a positive integer, got '" + *t + "'");
    }
  }
  if (o.threads) ctx.config.eval.threads = *o.threads;
  if (auto d = env("CRNET_OUT_DIR")) ctx.config.paths.out_dir = *d;
  if (!o.out_dir.empty()) ctx.config.paths.out_dir = o.out_dir;
  ctx.config.validate();
  ctx.out_dir = ctx.config.paths.out_dir;
  if (!o.checkpoint.empty()) ctx.checkpoint = o.checkpoint;
  ctx.log = &std::cout;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class regularization network for few-shot classification"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--checkpoint", o.checkpoint, "Checkpoint to start from or evaluate");
  app.add_option("--out-dir", o.out_dir, "Output directory (env CRNET_OUT_DIR)");
  app.add_option("--num-tasks", o.num_tasks, "Evaluation tasks / analysis tests")->check(CLI::PositiveNumber);
  app.add_option("--threads", o.threads, "Evaluation threads (env CRNET_THREADS)")->check(CLI::PositiveNumber);
  app.fallthrough();

  const char* commands[][2] = {
      {"generate", "Write the synthetic dataset to disk"},
      {"pretrain", "Supervised warm-up of the embedding network"},
      {"train", "Episodic training"},
      {"eval", "Few-shot accuracy with 95% intervals on the test split"},
      {"metashift", "Descriptor stability per test class (decoded vs mean prototype)"},
      {"fid", "Frechet distance between support and query features per test"},
      {"export", "Test-split embeddings as CSV"},
      {"sweep-basis", "Train and evaluate for each basis count in analysis.sweep_bases"},
      {"print-config", "Print the resolved configuration as JSON"},
  };
  for (const auto& c : commands) app.add_subcommand(c[0], c[1]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  crnet::CommandContext ctx;
  try {
    ctx = make_context(o);
  } catch (const std::exception& e) {
    std::cerr << "crnet: " << e.what() << "\n";
    return 1;
  }

  try {
    if (command == "generate") crnet::cmd_generate(ctx);
    else if (command == "pretrain") crnet::cmd_pretrain(ctx);
    else if (command == "train") crnet::cmd_train(ctx);
    else if (command == "eval") crnet::cmd_eval(ctx);
    else if (command == "metashift") crnet::cmd_metashift(ctx);
    else if (command == "fid") crnet::cmd_fid(ctx);
    else if (command == "export") crnet::cmd_export(ctx);
    else if (command == "sweep-basis") crnet::cmd_sweep_basis(ctx);
    else if (command == "print-config") std::cout << crnet::to_json(ctx.config).dump(2) << "\n";
  } catch (const std::invalid_argument& e) {
    std::cerr << "crnet " << command << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "crnet " << command << ": " << e.what() << "\n";
    return 2;
  }
  return 0;
}
