#pragma once

#include <ostream>
#include <utility>
#include <vector>

#include "masstlab/embedmodel.hpp"
#include "masstlab/matrix.hpp"
#include "masstlab/rng.hpp"
#include "masstlab/synthdata.hpp"

namespace masstlab {

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct RocPoint {
  double threshold;
  double far;
  double tar;
};

// Exact sweep over the union of observed scores (ascending threshold), with
// a final sentinel point reaching FAR = 0. TAR and FAR are both
// non-increasing along the curve.
struct RocCurve {
  std::vector<RocPoint> points;
};

RocCurve roc(const std::vector<double>& genuine, const std::vector<double>& impostor);

// Largest TAR achievable subject to FAR <= far, i.e. TAR at the smallest
// threshold whose FAR is within the target.
double tar_at_far(const RocCurve& curve, double far);

// Fraction of probes whose top-1 cosine match over gallery plus distractors
// is the probe's own gallery entry. Candidates are scanned gallery first,
// ties keep the earliest candidate, so a distractor duplicating a gallery
// entry cannot displace it.
double rank1_identification(const Matrix& probe_feats, const std::vector<int>& probe_ids,
                            const Matrix& gallery_feats, const std::vector<int>& gallery_ids,
                            const Matrix& distractors);

// Fraction of feature dimensions with variance below 1e-6 across the rows.
double dimension_health(const Matrix& features);

// Sample-index pairs drawn from a dataset: genuine = same id, impostor =
// different ids, no repeats.
struct PairList {
  std::vector<std::pair<int, int>> genuine;
  std::vector<std::pair<int, int>> impostor;
};

PairList build_pairs(const SampledDataset& data, long genuine_count, long impostor_count, Rng rng);

struct EvalSpec {
  long genuine_pairs = 2000;
  long impostor_pairs = 20000;
  std::vector<double> fars = {1e-1, 1e-2, 1e-3};
  std::uint64_t seed = 1;
};

struct EvalReport {
  std::vector<std::pair<double, double>> far_tar;
  double rank1 = 0.0;
  double collapsed_frac = 0.0;
};

// Embeds every sample with the probe network, scores verification pairs,
// runs rank-1 identification (gallery = first sample per id, probe = second,
// distractors = any further samples) and the collapse diagnostic.
EvalReport evaluate(const EmbeddingNet& net, const SampledDataset& data, const EvalSpec& spec);

// "far,tar" header and rows, then "rank1,<acc>" and "collapsed_frac,<v>".
void write_eval_csv(const EvalReport& report, std::ostream& out);

}  // namespace masstlab
