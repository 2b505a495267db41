#include "masstlab/runner.hpp"

#include <chrono>
#include <fstream>

#include "masstlab/textio.hpp"

namespace masstlab {

TrainRunOutputs run_train(const ExperimentConfig& cfg) {
  cfg.validate_for_train();
  const auto started = std::chrono::steady_clock::now();

  const SampledDataset data = resolve_dataset(cfg);

  TrainRunOutputs out;
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);

  out.result = train(cfg.trainer, data);

  out.checkpoint = dir / "probe.net";
  save_checkpoint(out.result.probe, out.checkpoint);

  out.metrics_csv = dir / "train.csv";
  {
    std::ofstream f(out.metrics_csv);
    if (!f) throw Error("cli: cannot write '" + out.metrics_csv.string() + "'");
    write_metrics_csv(out.result.log, f);
  }

  if (out.result.trace.has_value()) {
    out.curvature_csv = dir / "curvature.csv";
    std::ofstream f(out.curvature_csv);
    if (!f) throw Error("cli: cannot write '" + out.curvature_csv.string() + "'");
    write_curvature_csv(*out.result.trace, f);
  }

  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);

  out.manifest = dir / "manifest.txt";
  {
    std::ofstream f(out.manifest);
    if (!f) throw Error("cli: cannot write '" + out.manifest.string() + "'");
    f << "# masstlab run manifest\n";
    f << "version=" << kVersionTag << '\n';
    f << "seed=" << cfg.trainer.seed << '\n';
    f << "duration_ms=" << elapsed.count() << '\n';
    for (const auto& [k, v] : cfg.echo()) f << "config." << k << '=' << v << '\n';
    f << "output=" << out.checkpoint.filename().string() << '\n';
    f << "output=" << out.metrics_csv.filename().string() << '\n';
    if (!out.curvature_csv.empty()) f << "output=" << out.curvature_csv.filename().string() << '\n';
    f << "output=" << out.manifest.filename().string() << '\n';
  }
  return out;
}

CurvatureTrace run_curvature(const EmbeddingNet& net, const SampledDataset& data,
                             const CurvatureRunSpec& spec) {
  if (net.input_dim() != data.input_dim)
    throw ShapeError("cli: checkpoint expects input dimension " + std::to_string(net.input_dim()) +
                     ", dataset has " + std::to_string(data.input_dim));
  if (spec.probes < 1) throw ConfigError("cli: probe count must be >= 1");

  const Rng root(spec.seed);
  Rng batch_rng = root.stream("curv");
  const Batch batch = draw_batch(data, std::min(spec.batch_ids, data.num_ids), batch_rng);

  PrototypeSet protos;
  protos.positives = forward(net, batch.gallery);
  protos.positive_ids = batch.ids;
  protos.negatives = Matrix(0, protos.positives.cols);

  EmbeddingNet scratch = net;
  const GradFn grad_fn = [&](const Vector& theta) {
    load_params(scratch, theta);
    const ForwardTrace trace = forward_trace(scratch, batch.probe);
    const LogitsBundle bundle = make_logits(trace.features, batch.ids, protos, spec.loss);
    const CrossEntropyResult ce = cross_entropy(bundle);
    return backward(scratch, trace, ce.d_features);
  };

  const Rng power_root = root.stream("power_v");
  CurvatureTrace trace;
  for (int p = 0; p < spec.probes; ++p) {
    PowerIterConfig pc;
    pc.thr = spec.thr;
    pc.max_iters = spec.max_iters;
    pc.seed = power_root.fork_seed(static_cast<std::uint64_t>(p));
    const PowerIterResult res = power_iteration(grad_fn, net.theta, pc);
    trace.points.push_back({p + 1, res.lambda_max, res.rayleigh, res.iters});
  }
  return trace;
}

}  // namespace masstlab
