#include "masstlab/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "masstlab/textio.hpp"

namespace masstlab {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("evalsuite: cosine of different-length vectors");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw NormTooSmall("evalsuite: cosine of zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

RocCurve roc(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  if (genuine.empty() || impostor.empty())
    throw Error("evalsuite: roc needs non-empty score lists");

  std::vector<double> thresholds;
  thresholds.reserve(genuine.size() + impostor.size());
  thresholds.insert(thresholds.end(), genuine.begin(), genuine.end());
  thresholds.insert(thresholds.end(), impostor.begin(), impostor.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<double> gs = genuine;
  std::vector<double> is = impostor;
  std::sort(gs.begin(), gs.end());
  std::sort(is.begin(), is.end());

  // accept when score >= threshold
  const auto frac_at_least = [](const std::vector<double>& sorted, double t) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(sorted.end() - it) / static_cast<double>(sorted.size());
  };

  RocCurve curve;
  curve.points.reserve(thresholds.size() + 1);
  for (double t : thresholds)
    curve.points.push_back({t, frac_at_least(is, t), frac_at_least(gs, t)});
  // Sentinel above every score: the FAR = 0 endpoint.
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  return curve;
}

double tar_at_far(const RocCurve& curve, double far) {
  if (curve.points.empty()) throw Error("evalsuite: empty roc curve");
  if (far < 0.0) throw Error("evalsuite: far must be >= 0");
  // FAR is non-increasing in threshold, so the first admissible point (in
  // ascending threshold order) carries the largest TAR.
  for (const auto& p : curve.points)
    if (p.far <= far) return p.tar;
  return 0.0;
}

double rank1_identification(const Matrix& probe_feats, const std::vector<int>& probe_ids,
                            const Matrix& gallery_feats, const std::vector<int>& gallery_ids,
                            const Matrix& distractors) {
  if (probe_feats.rows != static_cast<int>(probe_ids.size()) ||
      gallery_feats.rows != static_cast<int>(gallery_ids.size()))
    throw ShapeError("evalsuite: id count mismatch");
  if (probe_feats.rows == 0) throw Error("evalsuite: no probes");

  int correct = 0;
  for (int p = 0; p < probe_feats.rows; ++p) {
    const auto probe = probe_feats.row(p);
    int target = -1;
    for (int g = 0; g < gallery_feats.rows; ++g) {
      if (gallery_ids[g] == probe_ids[p]) {
        if (target >= 0)
          throw Error("evalsuite: probe id " + std::to_string(probe_ids[p]) +
                      " appears more than once in gallery");
        target = g;
      }
    }
    if (target < 0)
      throw Error("evalsuite: probe id " + std::to_string(probe_ids[p]) + " missing from gallery");

    int best = 0;
    double best_score = cosine_similarity(probe, gallery_feats.row(0));
    for (int g = 1; g < gallery_feats.rows; ++g) {
      const double s = cosine_similarity(probe, gallery_feats.row(g));
      if (s > best_score) {  // strict: earliest candidate wins ties
        best_score = s;
        best = g;
      }
    }
    for (int d = 0; d < distractors.rows; ++d) {
      const double s = cosine_similarity(probe, distractors.row(d));
      if (s > best_score) {
        best_score = s;
        best = gallery_feats.rows + d;
      }
    }
    if (best == target) ++correct;
  }
  return static_cast<double>(correct) / probe_feats.rows;
}

double dimension_health(const Matrix& features) {
  if (features.rows < 2) throw Error("evalsuite: dimension health needs at least 2 rows");
  int collapsed = 0;
  for (int j = 0; j < features.cols; ++j) {
    double mean = 0.0;
    for (int i = 0; i < features.rows; ++i) mean += features(i, j);
    mean /= features.rows;
    double var = 0.0;
    for (int i = 0; i < features.rows; ++i) {
      const double d = features(i, j) - mean;
      var += d * d;
    }
    var /= features.rows;
    if (var < 1e-6) ++collapsed;
  }
  return static_cast<double>(collapsed) / features.cols;
}

PairList build_pairs(const SampledDataset& data, long genuine_count, long impostor_count, Rng rng) {
  PairList out;

  // Genuine: enumerate every same-id pair, then keep a random subset.
  std::vector<std::pair<int, int>> all_genuine;
  for (int id = 0; id < data.num_ids; ++id) {
    for (int a = data.offsets[id]; a < data.offsets[id + 1]; ++a)
      for (int b = a + 1; b < data.offsets[id + 1]; ++b) all_genuine.emplace_back(a, b);
  }
  if (static_cast<long>(all_genuine.size()) <= genuine_count) {
    out.genuine = std::move(all_genuine);
  } else {
    for (long i = 0; i < genuine_count; ++i) {
      const long j = i + rng.below(static_cast<int>(all_genuine.size() - i));
      std::swap(all_genuine[i], all_genuine[j]);
      out.genuine.push_back(all_genuine[i]);
    }
  }

  // Impostor: rejection-sample distinct cross-id pairs.
  std::unordered_set<long long> seen;
  const int total = data.total();
  long attempts = 0;
  const long attempt_cap = impostor_count * 50 + 1000;
  while (static_cast<long>(out.impostor.size()) < impostor_count && attempts++ < attempt_cap) {
    const int a = rng.below(total);
    const int b = rng.below(total);
    if (data.sample_ids[a] == data.sample_ids[b]) continue;
    const int lo = std::min(a, b);
    const int hi = std::max(a, b);
    const long long key = static_cast<long long>(lo) * total + hi;
    if (!seen.insert(key).second) continue;
    out.impostor.emplace_back(lo, hi);
  }
  return out;
}

EvalReport evaluate(const EmbeddingNet& net, const SampledDataset& data, const EvalSpec& spec) {
  if (net.input_dim() != data.input_dim)
    throw ShapeError("evalsuite: checkpoint expects input dimension " +
                     std::to_string(net.input_dim()) + ", dataset has " +
                     std::to_string(data.input_dim));

  const Matrix feats = forward(net, data.samples);

  const PairList pairs = build_pairs(data, spec.genuine_pairs, spec.impostor_pairs, Rng(spec.seed));
  std::vector<double> genuine_scores, impostor_scores;
  genuine_scores.reserve(pairs.genuine.size());
  impostor_scores.reserve(pairs.impostor.size());
  for (const auto& [a, b] : pairs.genuine)
    genuine_scores.push_back(cosine_similarity(feats.row(a), feats.row(b)));
  for (const auto& [a, b] : pairs.impostor)
    impostor_scores.push_back(cosine_similarity(feats.row(a), feats.row(b)));

  EvalReport report;
  const RocCurve curve = roc(genuine_scores, impostor_scores);
  for (double far : spec.fars) report.far_tar.emplace_back(far, tar_at_far(curve, far));

  // Identification protocol: first sample per id enrolls the gallery, the
  // second queries it, anything beyond plays unlabeled distractor.
  std::vector<int> ids(data.num_ids);
  Matrix gallery(data.num_ids, feats.cols);
  Matrix probes(data.num_ids, feats.cols);
  int extra = 0;
  for (int id = 0; id < data.num_ids; ++id) extra += data.count_of(id) - 2;
  Matrix distractors(extra, feats.cols);
  int d = 0;
  for (int id = 0; id < data.num_ids; ++id) {
    ids[id] = id;
    const int base = data.offsets[id];
    std::copy(feats.row(base).begin(), feats.row(base).end(), gallery.row(id).begin());
    std::copy(feats.row(base + 1).begin(), feats.row(base + 1).end(), probes.row(id).begin());
    for (int k = base + 2; k < data.offsets[id + 1]; ++k) {
      std::copy(feats.row(k).begin(), feats.row(k).end(), distractors.row(d).begin());
      ++d;
    }
  }
  report.rank1 = rank1_identification(probes, ids, gallery, ids, distractors);
  report.collapsed_frac = dimension_health(feats);
  return report;
}

void write_eval_csv(const EvalReport& report, std::ostream& out) {
  out << "far,tar\n";
  for (const auto& [far, tar] : report.far_tar)
    out << fmt_g17(far) << ',' << fmt_g17(tar) << '\n';
  out << "rank1," << fmt_g17(report.rank1) << '\n';
  out << "collapsed_frac," << fmt_g17(report.collapsed_frac) << '\n';
}

}  // namespace masstlab
