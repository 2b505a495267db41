// Experiment harness: dataset generation, training, evaluation, and
// curvature probing over the masstlab library. Exit codes: 0 success,
// 1 runtime error, 2 usage error. MASSTLAB_THREADS caps kernel parallelism.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "masstlab/runner.hpp"
#include "masstlab/textio.hpp"

namespace {

using namespace masstlab;

int cmd_gen(const std::string& out_path, int ids, int dim, const std::string& regime_tag,
            std::uint64_t seed) {
  const Regime regime = Regime::parse(regime_tag);
  const IdentityUniverse universe = generate_universe(ids, dim, seed);
  const SampledDataset data = sample_dataset(universe, regime);
  save_dataset(data, out_path);
  std::cout << "wrote " << out_path << ": " << data.num_ids << " ids, " << data.total()
            << " samples, regime " << data.regime.tag() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  const ExperimentConfig cfg = parse_config_file(config_path);
  const TrainRunOutputs out = run_train(cfg);
  std::cout << "checkpoint " << out.checkpoint.string() << "\n";
  std::cout << "metrics    " << out.metrics_csv.string() << "\n";
  if (!out.curvature_csv.empty()) std::cout << "curvature  " << out.curvature_csv.string() << "\n";
  std::cout << "manifest   " << out.manifest.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const EvalSpec& spec,
             const std::string& out_path) {
  const EmbeddingNet net = load_checkpoint(checkpoint);
  const SampledDataset data = load_dataset(dataset);
  const EvalReport report = evaluate(net, data, spec);
  if (out_path.empty() || out_path == "-") {
    write_eval_csv(report, std::cout);
  } else {
    std::ofstream f(out_path);
    if (!f) throw Error("cli: cannot write '" + out_path + "'");
    write_eval_csv(report, f);
  }
  return 0;
}

int cmd_curvature(const std::string& checkpoint, const std::string& dataset,
                  const CurvatureRunSpec& spec, const std::string& out_path, bool selftest) {
  CurvatureTrace trace;
  if (selftest) {
    // Built-in quadratic with Hessian diag(1, 2, 5): the probe must report 5.
    const Vector diag = {1.0, 2.0, 5.0};
    const GradFn grad = [&](const Vector& theta) {
      Vector g(theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i) g[i] = diag[i] * theta[i];
      return g;
    };
    const Vector theta = {0.3, -0.2, 0.1};
    for (int p = 0; p < spec.probes; ++p) {
      PowerIterConfig pc;
      pc.thr = spec.thr;
      pc.max_iters = spec.max_iters;
      pc.seed = Rng(spec.seed).stream("power_v").fork_seed(static_cast<std::uint64_t>(p));
      const PowerIterResult res = power_iteration(grad, theta, pc);
      trace.points.push_back({p + 1, res.lambda_max, res.rayleigh, res.iters});
    }
  } else {
    const EmbeddingNet net = load_checkpoint(checkpoint);
    const SampledDataset data = load_dataset(dataset);
    trace = run_curvature(net, data, spec);
  }
  std::cerr << "thr=" << fmt_g17(spec.thr) << " max=" << spec.max_iters << "\n";
  if (out_path.empty() || out_path == "-") {
    write_curvature_csv(trace, std::cout);
  } else {
    std::ofstream f(out_path);
    if (!f) throw Error("cli: cannot write '" + out_path + "'");
    write_curvature_csv(trace, f);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masstlab: semi-siamese training dynamics laboratory"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic identity dataset");
  int gen_ids = 0;
  int gen_dim = 32;
  std::string gen_regime;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--ids", gen_ids, "number of identities")->required();
  gen->add_option("--dim", gen_dim, "input dimension");
  gen->add_option("--regime", gen_regime, "deep:<depth> | shallow | longtail:<r>")->required();
  gen->add_option("--seed", gen_seed, "universe seed");
  gen->add_option("--out", gen_out, "output dataset file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train per a key=value config file");
  std::string train_config;
  train_cmd->add_option("config", train_config, "experiment config file")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a probe checkpoint on a dataset");
  std::string eval_checkpoint, eval_dataset, eval_out, eval_fars;
  EvalSpec eval_spec;
  eval_cmd->add_option("checkpoint", eval_checkpoint, "probe checkpoint file")->required();
  eval_cmd->add_option("dataset", eval_dataset, "evaluation dataset file")->required();
  eval_cmd->add_option("--genuine", eval_spec.genuine_pairs, "genuine pair count");
  eval_cmd->add_option("--impostor", eval_spec.impostor_pairs, "impostor pair count");
  eval_cmd->add_option("--fars", eval_fars, "comma-separated FAR operating points");
  eval_cmd->add_option("--seed", eval_spec.seed, "pair sampling seed");
  eval_cmd->add_option("--out", eval_out, "output CSV ('-' = stdout)");

  // curvature
  auto* curv_cmd = app.add_subcommand("curvature", "principal Hessian eigenvalue probes");
  std::string curv_checkpoint, curv_dataset, curv_out, curv_loss = "softmax";
  CurvatureRunSpec curv_spec;
  bool selftest = false;
  curv_cmd->add_option("checkpoint", curv_checkpoint, "probe checkpoint file");
  curv_cmd->add_option("dataset", curv_dataset, "dataset file");
  curv_cmd->add_option("--thr", curv_spec.thr, "power iteration convergence threshold");
  curv_cmd->add_option("--max", curv_spec.max_iters, "power iteration cap");
  curv_cmd->add_option("--probes", curv_spec.probes, "number of probe rows to emit");
  curv_cmd->add_option("--seed", curv_spec.seed, "probe seed");
  curv_cmd->add_option("--batch", curv_spec.batch_ids, "ids in the probe batch");
  curv_cmd->add_option("--loss", curv_loss, "loss kind for the probed objective");
  curv_cmd->add_option("--scale", curv_spec.loss.scale, "loss scale s");
  curv_cmd->add_flag("--selftest", selftest, "probe the built-in diag(1,2,5) quadratic");
  curv_cmd->add_option("--out", curv_out, "output CSV ('-' = stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_out, gen_ids, gen_dim, gen_regime, gen_seed);
    if (train_cmd->parsed()) return cmd_train(train_config);
    if (eval_cmd->parsed()) {
      if (!eval_fars.empty()) {
        eval_spec.fars.clear();
        for (const auto& tok : masstlab::split(eval_fars, ','))
          eval_spec.fars.push_back(std::stod(tok));
      }
      return cmd_eval(eval_checkpoint, eval_dataset, eval_spec, eval_out);
    }
    if (curv_cmd->parsed()) {
      curv_spec.loss.kind = masstlab::loss_kind_from_string(curv_loss);
      if (!selftest && (curv_checkpoint.empty() || curv_dataset.empty()))
        throw masstlab::ConfigError("cli: curvature needs a checkpoint and dataset (or --selftest)");
      return cmd_curvature(curv_checkpoint, curv_dataset, curv_spec, curv_out, selftest);
    }
  } catch (const masstlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
