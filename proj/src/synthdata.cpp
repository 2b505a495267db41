#include "masstlab/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "masstlab/diffcore.hpp"
#include "masstlab/textio.hpp"

namespace masstlab {

namespace {

constexpr double kCenterCosCap = 0.95;

Vector random_unit(int dim, Rng& rng) {
  Vector v(dim);
  for (double& x : v) x = rng.normal();
  return l2_normalize(v);
}

}  // namespace

Vector VariationTransform::apply(std::span<const double> x) const {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Vector out(x.begin(), x.end());
  for (int p = 0; p < plane_u.rows; ++p) {
    const auto u = plane_u.row(p);
    const auto v = plane_v.row(p);
    const double a = dot(x, u);
    const double b = dot(x, v);
    axpy(a * c - b * s - a, u, out);
    axpy(a * s + b * c - b, v, out);
  }
  return out;
}

Regime Regime::parse(std::string_view tag) {
  if (tag == "shallow") return shallow();
  if (tag.rfind("deep:", 0) == 0) {
    const std::string depth_str(tag.substr(5));
    try {
      const int depth = std::stoi(depth_str);
      if (depth < 2) throw ConfigError("synthdata: deep depth must be >= 2");
      return deep(depth);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("synthdata: bad deep depth '" + depth_str + "'");
    }
  }
  if (tag.rfind("longtail:", 0) == 0) {
    const std::string r_str(tag.substr(9));
    try {
      const double r = std::stod(r_str);
      if (r < 0.0) throw ConfigError("synthdata: long-tail r must be >= 0");
      return longtail(r);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("synthdata: bad long-tail r '" + r_str + "'");
    }
  }
  throw ConfigError("synthdata: unknown regime '" + std::string(tag) +
                    "' (expected deep:<depth>|shallow|longtail:<r>)");
}

std::string Regime::tag() const {
  switch (kind) {
    case RegimeKind::Deep: return "deep:" + std::to_string(depth);
    case RegimeKind::Shallow: return "shallow";
    case RegimeKind::Longtail: return "longtail:" + fmt_g17(r);
  }
  return "?";
}

IdentityUniverse generate_universe(int num_ids, int input_dim, std::uint64_t seed,
                                   double noise_scale, int num_variations) {
  if (num_ids < 2) throw ConfigError("synthdata: need at least 2 ids");
  if (input_dim < 2) throw ConfigError("synthdata: need input_dim >= 2");

  IdentityUniverse u;
  u.num_ids = num_ids;
  u.input_dim = input_dim;
  u.noise_scale = noise_scale;
  u.seed = seed;
  u.centers = Matrix(num_ids, input_dim);

  Rng rng = Rng(seed).stream("centers");
  const long budget = 100L * num_ids;
  long draws = 0;
  for (int i = 0; i < num_ids; ++i) {
    while (true) {
      if (draws++ >= budget + num_ids)
        throw Error("synthdata: cannot place " + std::to_string(num_ids) +
                    " centers with pairwise |cos| <= 0.95 in dimension " + std::to_string(input_dim));
      const Vector c = random_unit(input_dim, rng);
      bool ok = true;
      for (int j = 0; j < i && ok; ++j)
        ok = std::abs(dot(c, u.centers.row(j))) <= kCenterCosCap;
      if (ok) {
        std::copy(c.begin(), c.end(), u.centers.row(i).begin());
        break;
      }
    }
  }

  // Each transform rotates half the space (input_dim/4 orthonormal planes)
  // so the shared pose factors move samples substantially.
  Rng vrng = Rng(seed).stream("variations");
  const int num_planes = std::max(1, input_dim / 4);
  for (int k = 0; k < num_variations; ++k) {
    VariationTransform rot;
    rot.plane_u = Matrix(num_planes, input_dim);
    rot.plane_v = Matrix(num_planes, input_dim);
    std::vector<Vector> basis;
    for (int p = 0; p < 2 * num_planes; ++p) {
      Vector w = random_unit(input_dim, vrng);
      for (const Vector& prev : basis) axpy(-dot(w, prev), prev, w);
      basis.push_back(l2_normalize(w));
    }
    for (int p = 0; p < num_planes; ++p) {
      std::copy(basis[2 * p].begin(), basis[2 * p].end(), rot.plane_u.row(p).begin());
      std::copy(basis[2 * p + 1].begin(), basis[2 * p + 1].end(), rot.plane_v.row(p).begin());
    }
    rot.angle = vrng.uniform(0.9, 2.2);
    u.variations.push_back(std::move(rot));
  }
  return u;
}

std::vector<int> long_tail_counts(int num_org, int num_ids, double r) {
  if (num_org < 2) throw ConfigError("synthdata: num_org must be >= 2");
  if (r < 0.0) throw ConfigError("synthdata: r must be >= 0");
  std::vector<int> counts(num_ids);
  for (int index = 0; index < num_ids; ++index) {
    const double raw = num_org * std::pow(static_cast<double>(index + 1), -r);
    counts[index] = std::max(2, static_cast<int>(std::floor(raw)));
  }
  return counts;
}

SampledDataset sample_dataset(const IdentityUniverse& universe, const Regime& regime) {
  std::vector<int> counts;
  switch (regime.kind) {
    case RegimeKind::Deep:
      counts.assign(universe.num_ids, regime.depth);
      break;
    case RegimeKind::Shallow:
      counts.assign(universe.num_ids, 2);
      break;
    case RegimeKind::Longtail:
      counts = long_tail_counts(regime.depth, universe.num_ids, regime.r);
      break;
  }

  SampledDataset data;
  data.num_ids = universe.num_ids;
  data.input_dim = universe.input_dim;
  data.regime = regime;
  data.offsets.resize(universe.num_ids + 1, 0);
  int total = 0;
  for (int id = 0; id < universe.num_ids; ++id) {
    data.offsets[id] = total;
    total += counts[id];
  }
  data.offsets[universe.num_ids] = total;
  data.samples = Matrix(total, universe.input_dim);
  data.sample_ids.resize(total);

  // Per-id derived streams keep generation order-independent, so it could be
  // parallelized per id without changing a single sample.
  const Rng root = Rng(universe.seed).stream("samples");
  const int num_var = static_cast<int>(universe.variations.size());
  for (int id = 0; id < universe.num_ids; ++id) {
    Rng rng = root.stream(static_cast<std::uint64_t>(id));
    const auto center = universe.centers.row(id);
    for (int k = 0; k < counts[id]; ++k) {
      const int row = data.offsets[id] + k;
      data.sample_ids[row] = id;
      Vector raw(center.begin(), center.end());
      if (num_var > 0) {
        const Vector varied = universe.variations[rng.below(num_var)].apply(center);
        axpy(1.0, varied, raw);
      }
      for (int j = 0; j < universe.input_dim; ++j) raw[j] += universe.noise_scale * rng.normal();
      const Vector unit = l2_normalize(raw);
      std::copy(unit.begin(), unit.end(), data.samples.row(row).begin());
    }
  }
  return data;
}

std::pair<Vector, Vector> draw_pair(const SampledDataset& data, int id, Rng& rng) {
  if (id < 0 || id >= data.num_ids) throw Error("synthdata: unknown id " + std::to_string(id));
  const int n = data.count_of(id);
  if (n < 2) throw Error("synthdata: id " + std::to_string(id) + " has fewer than 2 samples");
  const int first = rng.below(n);
  int second = rng.below(n - 1);
  if (second >= first) ++second;
  const auto g = data.sample(data.offsets[id] + first);
  const auto p = data.sample(data.offsets[id] + second);
  return {Vector(g.begin(), g.end()), Vector(p.begin(), p.end())};
}

void save_dataset(const SampledDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("synthdata: cannot open '" + path.string() + "' for writing");
  out << "masstlab-data v1 " << data.num_ids << ' ' << data.input_dim << ' ' << data.regime.tag()
      << '\n';
  for (int row = 0; row < data.total(); ++row) {
    out << data.sample_ids[row];
    const auto s = data.samples.row(row);
    for (int j = 0; j < data.input_dim; ++j) out << ',' << fmt_g17(s[j]);
    out << '\n';
  }
  if (!out) throw Error("synthdata: write failed for '" + path.string() + "'");
}

SampledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("synthdata: cannot open '" + path.string() + "'");
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path.string(), 1, "missing header");
  std::istringstream hs(header);
  std::string magic, version, regime_tag;
  int num_ids = 0, input_dim = 0;
  if (!(hs >> magic >> version >> num_ids >> input_dim >> regime_tag) || magic != "masstlab-data" ||
      version != "v1")
    throw ParseError(path.string(), 1, "bad header '" + header + "'");
  if (num_ids < 1 || input_dim < 1) throw ParseError(path.string(), 1, "bad dimensions in header");

  SampledDataset data;
  data.num_ids = num_ids;
  data.input_dim = input_dim;
  data.regime = Regime::parse(regime_tag);

  std::vector<double> values;
  std::string line;
  long lineno = 1;
  int prev_id = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (static_cast<int>(fields.size()) != input_dim + 1)
      throw ParseError(path.string(), lineno,
                       "expected " + std::to_string(input_dim + 1) + " fields, got " +
                           std::to_string(fields.size()));
    int id = 0;
    try {
      id = std::stoi(fields[0]);
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "bad id '" + fields[0] + "'");
    }
    if (id < prev_id) throw ParseError(path.string(), lineno, "ids must be non-decreasing");
    if (id < 0 || id >= num_ids) throw ParseError(path.string(), lineno, "id out of range");
    prev_id = id;
    data.sample_ids.push_back(id);
    for (int j = 1; j <= input_dim; ++j) {
      try {
        values.push_back(std::stod(fields[j]));
      } catch (const std::exception&) {
        throw ParseError(path.string(), lineno, "bad value '" + fields[j] + "' in column " +
                                                    std::to_string(j + 1));
      }
    }
  }

  const int total = static_cast<int>(data.sample_ids.size());
  data.samples = Matrix(total, input_dim);
  data.samples.data = std::move(values);
  check_finite(data.samples, "synthdata: dataset");

  data.offsets.assign(num_ids + 1, 0);
  for (int id : data.sample_ids) ++data.offsets[id + 1];
  for (int id = 0; id < num_ids; ++id) {
    if (data.offsets[id + 1] < 2)
      throw ParseError(path.string(), lineno,
                       "id " + std::to_string(id) + " has fewer than 2 samples");
    data.offsets[id + 1] += data.offsets[id];
  }
  return data;
}

}  // namespace masstlab
