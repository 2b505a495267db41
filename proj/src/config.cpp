#include "masstlab/config.hpp"

#include <fstream>

#include "masstlab/textio.hpp"

namespace masstlab {

namespace {

long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long out = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("cli: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("cli: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& tok : split(v, ','))
    out.push_back(static_cast<int>(parse_long(key, std::string(trim(tok)))));
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& tok : split(v, ',')) out.push_back(parse_double(key, std::string(trim(tok))));
  return out;
}

}  // namespace

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cli: cannot open config '" + path.string() + "'");

  ExperimentConfig cfg;
  GenSpec gen;
  bool gen_touched = false;

  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("cli: line " + std::to_string(lineno) + " is not key=value: '" +
                        std::string(stripped) + "'");
    const std::string key{trim(stripped.substr(0, eq))};
    const std::string value{trim(stripped.substr(eq + 1))};

    // Enum-valued keys rethrow with the key named, so a bad value in a big
    // config is findable.
    const auto keyed = [&key](auto&& fn) -> decltype(fn()) {
      try {
        return fn();
      } catch (const ConfigError& e) {
        throw ConfigError("cli: key '" + key + "': " + e.what());
      }
    };

    if (key == "data.path") {
      cfg.data_path = value;
    } else if (key == "data.ids") {
      gen.ids = static_cast<int>(parse_long(key, value));
      gen_touched = true;
    } else if (key == "data.dim") {
      gen.dim = static_cast<int>(parse_long(key, value));
      gen_touched = true;
    } else if (key == "data.regime") {
      gen.regime = keyed([&] { return Regime::parse(value); });
      gen_touched = true;
    } else if (key == "data.seed") {
      gen.seed = static_cast<std::uint64_t>(parse_long(key, value));
      gen_touched = true;
    } else if (key == "data.noise") {
      gen.noise = parse_double(key, value);
      gen_touched = true;
    } else if (key == "net.hidden") {
      cfg.trainer.hidden = parse_int_list(key, value);
    } else if (key == "net.emb") {
      cfg.trainer.emb_dim = static_cast<int>(parse_long(key, value));
    } else if (key == "net.activation") {
      cfg.trainer.activation = keyed([&] { return activation_from_string(value); });
    } else if (key == "loss.kind") {
      cfg.trainer.loss.kind = keyed([&] { return loss_kind_from_string(value); });
    } else if (key == "loss.scale") {
      cfg.trainer.loss.scale = parse_double(key, value);
    } else if (key == "loss.margin") {
      cfg.trainer.loss.margin = parse_double(key, value);
    } else if (key == "loss.angular_m") {
      cfg.trainer.loss.angular_m = static_cast<int>(parse_long(key, value));
    } else if (key == "train.mode") {
      cfg.trainer.mode = keyed([&] { return train_mode_from_string(value); });
    } else if (key == "train.iterations") {
      cfg.trainer.iterations = parse_long(key, value);
    } else if (key == "train.batch_ids") {
      cfg.trainer.batch_ids = static_cast<int>(parse_long(key, value));
    } else if (key == "train.lr") {
      cfg.trainer.lr.initial = parse_double(key, value);
    } else if (key == "train.lr_milestones") {
      cfg.trainer.lr.milestones.clear();
      for (int m : parse_int_list(key, value)) cfg.trainer.lr.milestones.push_back(m);
    } else if (key == "train.lr_factor") {
      cfg.trainer.lr.factor = parse_double(key, value);
    } else if (key == "train.momentum") {
      cfg.trainer.momentum = parse_double(key, value);
    } else if (key == "train.agents") {
      cfg.trainer.agents = static_cast<int>(parse_long(key, value));
    } else if (key == "train.mixing") {
      cfg.trainer.mixing = parse_double(key, value);
    } else if (key == "train.queue") {
      cfg.trainer.queue_capacity = static_cast<std::size_t>(parse_long(key, value));
    } else if (key == "train.sgd_momentum") {
      cfg.trainer.sgd_momentum = parse_double(key, value);
    } else if (key == "train.weight_decay") {
      cfg.trainer.weight_decay = parse_double(key, value);
    } else if (key == "train.seed") {
      cfg.trainer.seed = static_cast<std::uint64_t>(parse_long(key, value));
    } else if (key == "train.proto_reg_alpha") {
      cfg.trainer.ablation.proto_alpha = parse_double(key, value);
    } else if (key == "train.proto_reg_beta") {
      cfg.trainer.ablation.proto_beta = parse_double(key, value);
    } else if (key == "train.net_penalty_eps") {
      cfg.trainer.ablation.net_eps = parse_double(key, value);
    } else if (key == "train.net_penalty_weight") {
      cfg.trainer.ablation.net_weight = parse_double(key, value);
    } else if (key == "train.curvature_every") {
      cfg.trainer.curvature_every = parse_long(key, value);
    } else if (key == "train.curvature_batch") {
      cfg.trainer.curvature_batch = static_cast<int>(parse_long(key, value));
    } else if (key == "train.power_thr") {
      cfg.trainer.power.thr = parse_double(key, value);
    } else if (key == "train.power_max") {
      cfg.trainer.power.max_iters = static_cast<int>(parse_long(key, value));
    } else if (key == "eval.data") {
      cfg.eval_data_path = value;
    } else if (key == "eval.genuine_pairs") {
      cfg.eval.genuine_pairs = parse_long(key, value);
    } else if (key == "eval.impostor_pairs") {
      cfg.eval.impostor_pairs = parse_long(key, value);
    } else if (key == "eval.fars") {
      cfg.eval.fars = parse_double_list(key, value);
    } else if (key == "eval.seed") {
      cfg.eval.seed = static_cast<std::uint64_t>(parse_long(key, value));
    } else if (key == "out.dir") {
      cfg.out_dir = value;
    } else {
      throw ConfigError("cli: unknown config key '" + key + "' (line " + std::to_string(lineno) +
                        ")");
    }
  }
  if (gen_touched) cfg.data_gen = gen;
  return cfg;
}

void ExperimentConfig::validate_for_train() const {
  if (data_path.empty() && !data_gen.has_value())
    throw ConfigError("cli: config needs data.path or data.ids/data.regime");
  if (!data_path.empty() && data_gen.has_value())
    throw ConfigError("cli: data.path and inline data.* generation are mutually exclusive");
  if (data_gen.has_value() && data_gen->ids < 2)
    throw ConfigError("cli: data.ids must be >= 2");
  if (out_dir.empty()) throw ConfigError("cli: out.dir is required");
  trainer.validate();
}

SampledDataset resolve_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data_path.empty()) return load_dataset(cfg.data_path);
  if (!cfg.data_gen.has_value()) throw ConfigError("cli: no dataset configured");
  const GenSpec& g = *cfg.data_gen;
  const IdentityUniverse universe = generate_universe(g.ids, g.dim, g.seed, g.noise);
  return sample_dataset(universe, g.regime);
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::echo() const {
  std::vector<std::pair<std::string, std::string>> kv;
  if (!data_path.empty()) kv.emplace_back("data.path", data_path);
  if (data_gen) {
    kv.emplace_back("data.ids", std::to_string(data_gen->ids));
    kv.emplace_back("data.dim", std::to_string(data_gen->dim));
    kv.emplace_back("data.regime", data_gen->regime.tag());
    kv.emplace_back("data.seed", std::to_string(data_gen->seed));
    kv.emplace_back("data.noise", fmt_g17(data_gen->noise));
  }
  std::string hidden;
  for (std::size_t i = 0; i < trainer.hidden.size(); ++i)
    hidden += (i ? "," : "") + std::to_string(trainer.hidden[i]);
  kv.emplace_back("net.hidden", hidden);
  kv.emplace_back("net.emb", std::to_string(trainer.emb_dim));
  kv.emplace_back("net.activation", std::string(to_string(trainer.activation)));
  kv.emplace_back("loss.kind", std::string(to_string(trainer.loss.kind)));
  kv.emplace_back("loss.scale", fmt_g17(trainer.loss.scale));
  kv.emplace_back("loss.margin", fmt_g17(trainer.loss.effective_margin()));
  kv.emplace_back("loss.angular_m", std::to_string(trainer.loss.angular_m));
  kv.emplace_back("train.mode", std::string(to_string(trainer.mode)));
  kv.emplace_back("train.iterations", std::to_string(trainer.iterations));
  kv.emplace_back("train.batch_ids", std::to_string(trainer.batch_ids));
  kv.emplace_back("train.lr", fmt_g17(trainer.lr.initial));
  std::string ms;
  std::vector<long> resolved = trainer.lr.milestones;
  if (resolved.empty())
    resolved = {static_cast<long>(0.6 * trainer.iterations),
                static_cast<long>(0.85 * trainer.iterations)};
  for (std::size_t i = 0; i < resolved.size(); ++i)
    ms += (i ? "," : "") + std::to_string(resolved[i]);
  kv.emplace_back("train.lr_milestones", ms);
  kv.emplace_back("train.lr_factor", fmt_g17(trainer.lr.factor));
  kv.emplace_back("train.momentum", fmt_g17(trainer.momentum));
  kv.emplace_back("train.agents", std::to_string(trainer.effective_agents()));
  kv.emplace_back("train.mixing", fmt_g17(trainer.effective_mixing()));
  kv.emplace_back("train.queue", std::to_string(trainer.queue_capacity));
  kv.emplace_back("train.sgd_momentum", fmt_g17(trainer.effective_sgd_momentum()));
  kv.emplace_back("train.weight_decay", fmt_g17(trainer.effective_weight_decay()));
  kv.emplace_back("train.seed", std::to_string(trainer.seed));
  kv.emplace_back("train.proto_reg_alpha", fmt_g17(trainer.ablation.proto_alpha));
  kv.emplace_back("train.proto_reg_beta", fmt_g17(trainer.ablation.proto_beta));
  kv.emplace_back("train.net_penalty_eps", fmt_g17(trainer.ablation.net_eps));
  kv.emplace_back("train.net_penalty_weight", fmt_g17(trainer.ablation.net_weight));
  kv.emplace_back("train.curvature_every", std::to_string(trainer.curvature_every));
  kv.emplace_back("train.curvature_batch", std::to_string(trainer.curvature_batch));
  kv.emplace_back("train.power_thr", fmt_g17(trainer.power.thr));
  kv.emplace_back("train.power_max", std::to_string(trainer.power.max_iters));
  if (eval_data_path) kv.emplace_back("eval.data", *eval_data_path);
  kv.emplace_back("eval.genuine_pairs", std::to_string(eval.genuine_pairs));
  kv.emplace_back("eval.impostor_pairs", std::to_string(eval.impostor_pairs));
  std::string fars;
  for (std::size_t i = 0; i < eval.fars.size(); ++i) fars += (i ? "," : "") + fmt_g17(eval.fars[i]);
  kv.emplace_back("eval.fars", fars);
  kv.emplace_back("eval.seed", std::to_string(eval.seed));
  if (!out_dir.empty()) kv.emplace_back("out.dir", out_dir);
  return kv;
}

}  // namespace masstlab
