#pragma once

// Evaluation: ROC/AUC (Mann-Whitney, ties count half), a multinomial
// logistic probe standing in for the base classifier's softmax, the
// synthetic benchmark runner, threshold selection, and the ablation sweep
// harness. Known samples are the positive class: higher membership score
// means more likely known.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnd/dataset.hpp"
#include "mnd/inference.hpp"
#include "mnd/network.hpp"
#include "mnd/numerics.hpp"
#include "mnd/textio.hpp"
#include "mnd/training.hpp"

namespace mnd {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct RocResult {
  double auc = 0.0;
  std::vector<RocPoint> curve;  // from (0,0) to (1,1), both coordinates non-decreasing
  std::size_t n_known = 0;
  std::size_t n_novel = 0;
};

// AUC via the rank-sum form of the Mann-Whitney statistic; ties get average
// ranks (each tied known/novel pair contributes 1/2). The curve sweeps every
// distinct score as a threshold, classifying score >= t as known.
inline RocResult roc_auc(const std::vector<double>& known_scores,
                         const std::vector<double>& novel_scores) {
  if (known_scores.empty() || novel_scores.empty())
    throw std::invalid_argument("roc_auc: need at least one known and one novel score");
  for (double s : known_scores)
    if (!std::isfinite(s)) throw std::invalid_argument("roc_auc: non-finite known score");
  for (double s : novel_scores)
    if (!std::isfinite(s)) throw std::invalid_argument("roc_auc: non-finite novel score");

  const std::size_t nk = known_scores.size();
  const std::size_t nn = novel_scores.size();

  std::vector<std::pair<double, bool>> all;  // (score, is_known)
  all.reserve(nk + nn);
  for (double s : known_scores) all.emplace_back(s, true);
  for (double s : novel_scores) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double rank_sum_known = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (all[t].second) rank_sum_known += avg_rank;
    i = j;
  }
  double u_stat = rank_sum_known - 0.5 * static_cast<double>(nk) * static_cast<double>(nk + 1);

  RocResult out;
  out.n_known = nk;
  out.n_novel = nn;
  out.auc = u_stat / (static_cast<double>(nk) * static_cast<double>(nn));

  out.curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = all.size(); i > 0;) {
    std::size_t j = i;  // scan a block of equal scores downward
    double s = all[i - 1].first;
    while (i > 0 && all[i - 1].first == s) {
      if (all[i - 1].second) ++tp;
      else ++fp;
      --i;
    }
    (void)j;
    out.curve.push_back({static_cast<double>(fp) / static_cast<double>(nn),
                         static_cast<double>(tp) / static_cast<double>(nk), s});
  }
  return out;
}

// Youden's J = TPR - FPR maximized over candidate thresholds: the smallest
// score plus the midpoints between consecutive distinct scores. Ties return
// the smallest candidate.
inline double choose_threshold(const std::vector<double>& val_known_scores,
                               const std::vector<double>& val_novel_scores) {
  if (val_known_scores.empty() || val_novel_scores.empty())
    throw std::invalid_argument("choose_threshold: need validation scores for both populations");

  std::vector<double> distinct = val_known_scores;
  distinct.insert(distinct.end(), val_novel_scores.begin(), val_novel_scores.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> candidates;
  candidates.push_back(distinct.front());
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i)
    candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));

  std::vector<double> known_sorted = val_known_scores;
  std::vector<double> novel_sorted = val_novel_scores;
  std::sort(known_sorted.begin(), known_sorted.end());
  std::sort(novel_sorted.begin(), novel_sorted.end());
  auto frac_at_least = [](const std::vector<double>& sorted, double t) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(sorted.end() - it) / static_cast<double>(sorted.size());
  };

  double best_j = -2.0;
  double best_t = candidates.front();
  for (double t : candidates) {
    double j = frac_at_least(known_sorted, t) - frac_at_least(novel_sorted, t);
    if (j > best_j) {
      best_j = j;
      best_t = t;
    }
  }
  return best_t;
}

// ---------------------------------------------------------------------------
// Linear probe: softmax regression over the features, used for top-N class
// selection in place of the upstream classifier.

struct LinearProbe {
  Matrix w;  // K x d
  Vec b;

  Vec class_scores(const Vec& q) const {
    Vec z = linear_forward(w, b, q);
    double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - zmax);
      sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
  }
};

// Multinomial logistic regression trained with Adam on softmax cross-entropy.
inline LinearProbe train_linear_probe(const LabeledDataset& ds, int steps, double lr,
                                      RngStream& rng) {
  validate_training_dataset(ds, 1);
  if (steps < 1 || !(lr > 0.0))
    throw std::invalid_argument("train_linear_probe: steps and lr must be positive");

  const std::size_t d = ds.dim();
  const std::size_t k = static_cast<std::size_t>(ds.num_known_classes);
  LinearProbe probe;
  probe.w = Matrix(k, d);
  probe.b = Vec(k, 0.0);

  Matrix mw(k, d), vw(k, d);
  Vec mb(k, 0.0), vb(k, 0.0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const std::size_t batch = std::min<std::size_t>(64, ds.size());

  Matrix gw(k, d);
  Vec gb(k, 0.0);
  for (int step = 1; step <= steps; ++step) {
    std::fill(gw.values.begin(), gw.values.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t i = static_cast<std::size_t>(rng.next_below(ds.size()));
      Vec x = ds.row(i);
      Vec s = probe.class_scores(x);
      s[static_cast<std::size_t>(ds.labels[i]) - 1] -= 1.0;  // d(xent)/dz = softmax - onehot
      for (std::size_t r = 0; r < k; ++r) {
        double* grow = gw.row_ptr(r);
        for (std::size_t c = 0; c < d; ++c) grow[c] += s[r] * x[c];
        gb[r] += s[r];
      }
    }
    double inv = 1.0 / static_cast<double>(batch);
    double bias1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    double bias2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    auto update = [&](double* param, double* m, double* v, double* grad, std::size_t n) {
      for (std::size_t i2 = 0; i2 < n; ++i2) {
        double g = grad[i2] * inv;
        m[i2] = beta1 * m[i2] + (1.0 - beta1) * g;
        v[i2] = beta2 * v[i2] + (1.0 - beta2) * g * g;
        param[i2] -= lr * (m[i2] / bias1) / (std::sqrt(v[i2] / bias2) + eps);
      }
    };
    update(probe.w.values.data(), mw.values.data(), vw.values.data(), gw.values.data(),
           gw.values.size());
    update(probe.b.data(), mb.data(), vb.data(), gb.data(), gb.size());
  }
  return probe;
}

inline double probe_accuracy(const LinearProbe& probe, const LabeledDataset& ds) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Vec s = probe.class_scores(ds.row(i));
    std::size_t arg = static_cast<std::size_t>(
        std::max_element(s.begin(), s.end()) - s.begin());
    if (static_cast<int>(arg) + 1 == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

inline Matrix probe_score_matrix(const LinearProbe& probe, const LabeledDataset& ds) {
  Matrix out(ds.size(), probe.b.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Vec s = probe.class_scores(ds.row(i));
    std::copy(s.begin(), s.end(), out.row_ptr(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distance baseline: negative Euclidean distance to the nearest prototype.
// Not a method from the literature, just a built-in sanity yardstick.

inline double nearest_prototype_distance(std::span<const double> q, const PrototypeSet& protos) {
  double best = std::numeric_limits<double>::infinity();
  for (int c = 1; c <= protos.num_classes; ++c)
    for (const Vec& mu : protos.of(c))
      best = std::min(best, detail::sq_dist(q, std::span<const double>(mu)));
  return std::sqrt(best);
}

inline std::vector<double> baseline_scores(const LabeledDataset& ds, const PrototypeSet& protos) {
  std::vector<double> scores(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    scores[i] = -nearest_prototype_distance(ds.row_view(i), protos);
  return scores;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark runner and ablation sweeps.
//
// Seed derivation: the data generator uses synth.seed, training uses
// train.seed, prototype k-means uses train.seed + 1, the probe train.seed + 2.

struct BenchmarkConfig {
  SyntheticConfig synth;
  TrainConfig train;
  InferenceConfig infer;
  int prototypes_per_class = 1;
  int kmeans_iters = 25;
  int probe_steps = 3000;
  double probe_lr = 0.01;
  int threads = 1;
};

struct BenchmarkArtifacts {
  SyntheticSplit data;
  NetworkParams params;
  PrototypeSet prototypes;
  std::vector<HistoryRecord> history;
};

inline BenchmarkArtifacts prepare_benchmark(const BenchmarkConfig& cfg) {
  BenchmarkArtifacts art;
  art.data = generate_synthetic(cfg.synth);
  RngStream train_rng(cfg.train.seed);
  TrainResult tr = train(art.data.train, cfg.train, train_rng);
  art.params = std::move(tr.params);
  art.history = std::move(tr.history);
  RngStream proto_rng(cfg.train.seed + 1);
  art.prototypes =
      compute_prototypes(art.data.train, cfg.prototypes_per_class, cfg.kmeans_iters, proto_rng);
  return art;
}

struct ScorePair {
  std::vector<double> known;
  std::vector<double> novel;
};

inline ScorePair score_benchmark(const BenchmarkArtifacts& art, const PrototypeSet& protos,
                                 const InferenceConfig& infer, const BenchmarkConfig& cfg,
                                 const LinearProbe* probe = nullptr) {
  const Matrix* known_base = nullptr;
  const Matrix* novel_base = nullptr;
  Matrix known_scores_matrix, novel_scores_matrix;
  int effective_n = (infer.top_n == 0) ? art.params.num_classes : infer.top_n;
  if (effective_n < art.params.num_classes) {
    if (probe == nullptr)
      throw std::invalid_argument("score_benchmark: top_n restriction needs the linear probe");
    known_scores_matrix = probe_score_matrix(*probe, art.data.test_known);
    novel_scores_matrix = probe_score_matrix(*probe, art.data.test_novel);
    known_base = &known_scores_matrix;
    novel_base = &novel_scores_matrix;
  }

  ScorePair out;
  auto collect = [&](const LabeledDataset& ds, const Matrix* base) {
    std::vector<double> scores;
    scores.reserve(ds.size());
    for (const NoveltyVerdict& v :
         score_dataset(art.params, ds, protos, infer, base, cfg.threads))
      scores.push_back(v.membership_score);
    return scores;
  };
  out.known = collect(art.data.test_known, known_base);
  out.novel = collect(art.data.test_novel, novel_base);
  return out;
}

struct BenchmarkResult {
  RocResult mnd_roc;
  RocResult baseline_roc;
  ScorePair mnd_scores;
};

// Full pipeline: generate data, train, compute prototypes, score the test
// sets, and evaluate both the trained detector and the distance baseline.
inline BenchmarkResult run_benchmark(const BenchmarkConfig& cfg) {
  BenchmarkArtifacts art = prepare_benchmark(cfg);

  LinearProbe probe;
  bool needs_probe =
      cfg.infer.top_n != 0 && cfg.infer.top_n < art.params.num_classes;
  if (needs_probe) {
    RngStream probe_rng(cfg.train.seed + 2);
    probe = train_linear_probe(art.data.train, cfg.probe_steps, cfg.probe_lr, probe_rng);
  }

  BenchmarkResult result;
  result.mnd_scores = score_benchmark(art, art.prototypes, cfg.infer, cfg,
                                      needs_probe ? &probe : nullptr);
  result.mnd_roc = roc_auc(result.mnd_scores.known, result.mnd_scores.novel);
  result.baseline_roc = roc_auc(baseline_scores(art.data.test_known, art.prototypes),
                                baseline_scores(art.data.test_novel, art.prototypes));
  return result;
}

enum class SweepKind { TestAlpha, G, TopN, PrototypesPerClass };

inline SweepKind sweep_kind_from_string(const std::string& name) {
  if (name == "test_alpha") return SweepKind::TestAlpha;
  if (name == "g") return SweepKind::G;
  if (name == "top_n") return SweepKind::TopN;
  if (name == "prototypes_per_class") return SweepKind::PrototypesPerClass;
  throw std::invalid_argument(
      "unknown sweep kind '" + name +
      "' (expected test_alpha, g, top_n, or prototypes_per_class)");
}

inline const char* sweep_kind_name(SweepKind kind) {
  switch (kind) {
    case SweepKind::TestAlpha: return "test_alpha";
    case SweepKind::G: return "g";
    case SweepKind::TopN: return "top_n";
    case SweepKind::PrototypesPerClass: return "prototypes_per_class";
  }
  return "?";
}

struct SweepPoint {
  double value = 0.0;
  double auc = 0.0;
};

struct SweepReport {
  std::string parameter;
  std::vector<SweepPoint> points;  // parameter values strictly increasing
  std::string config_snapshot;
  std::uint64_t seed = 0;
};

inline std::string describe_config(const BenchmarkConfig& cfg) {
  std::string s;
  auto add = [&s](const std::string& key, const std::string& value) {
    s += key + "=" + value + "\n";
  };
  add("seed", std::to_string(cfg.synth.seed));
  add("dim", std::to_string(cfg.synth.dim));
  add("known-classes", std::to_string(cfg.synth.known_classes));
  add("novel-classes", std::to_string(cfg.synth.novel_classes));
  add("samples-per-class", std::to_string(cfg.synth.samples_per_class));
  add("cluster-std", format_double(cfg.synth.cluster_std));
  add("center-scale", format_double(cfg.synth.center_scale));
  add("g", format_double(cfg.train.g));
  add("lr", format_double(cfg.train.learning_rate));
  add("batch-size", std::to_string(cfg.train.batch_size));
  add("steps", std::to_string(cfg.train.steps));
  add("matched-pair-prob", format_double(cfg.train.matched_pair_prob));
  add("dropout", format_double(cfg.train.dropout_p));
  add("test-alpha", format_double(cfg.infer.test_alpha));
  add("top-n", std::to_string(cfg.infer.top_n));
  add("prototypes-per-class", std::to_string(cfg.prototypes_per_class));
  add("threads", std::to_string(cfg.threads));
  return s;
}

// Runs the pipeline once per parameter value. Only the g sweep retrains (from
// the same seed, so g is the single varying factor); the others re-score the
// model trained with the base configuration.
inline SweepReport sweep(SweepKind kind, const std::vector<double>& values,
                         const BenchmarkConfig& base) {
  if (values.size() < 2) throw std::invalid_argument("sweep: need at least two values");
  for (std::size_t i = 0; i + 1 < values.size(); ++i)
    if (!(values[i] < values[i + 1]))
      throw std::invalid_argument("sweep: values must be strictly increasing");

  SweepReport report;
  report.parameter = sweep_kind_name(kind);
  report.seed = base.synth.seed;
  report.config_snapshot = describe_config(base);

  auto check_int = [&](double v, const char* what) {
    if (v != std::floor(v) || v < 1.0)
      throw std::invalid_argument(std::string("sweep: ") + what + " values must be positive integers");
  };

  if (kind == SweepKind::G) {
    for (double v : values) {
      if (!(v >= 1.0)) throw std::invalid_argument("sweep: g values must be >= 1");
      BenchmarkConfig cfg = base;
      cfg.train.g = v;
      report.points.push_back({v, run_benchmark(cfg).mnd_roc.auc});
    }
    return report;
  }

  BenchmarkArtifacts art = prepare_benchmark(base);
  LinearProbe probe;
  bool probe_ready = false;

  for (double v : values) {
    InferenceConfig infer = base.infer;
    const PrototypeSet* protos = &art.prototypes;
    PrototypeSet reclustered;
    switch (kind) {
      case SweepKind::TestAlpha:
        if (!(v > 0.0 && v < 1.0))
          throw std::invalid_argument("sweep: test_alpha values must be in (0, 1)");
        infer.test_alpha = v;
        break;
      case SweepKind::TopN: {
        check_int(v, "top_n");
        if (v > art.params.num_classes)
          throw std::invalid_argument("sweep: top_n exceeds the class count");
        infer.top_n = static_cast<int>(v);
        if (!probe_ready && infer.top_n < art.params.num_classes) {
          RngStream probe_rng(base.train.seed + 2);
          probe = train_linear_probe(art.data.train, base.probe_steps, base.probe_lr, probe_rng);
          probe_ready = true;
        }
        break;
      }
      case SweepKind::PrototypesPerClass: {
        check_int(v, "prototypes_per_class");
        RngStream proto_rng(base.train.seed + 1);
        reclustered = compute_prototypes(art.data.train, static_cast<int>(v), base.kmeans_iters,
                                         proto_rng);
        protos = &reclustered;
        break;
      }
      case SweepKind::G:
        break;  // handled above
    }
    ScorePair scores = score_benchmark(art, *protos, infer, base, probe_ready ? &probe : nullptr);
    report.points.push_back({v, roc_auc(scores.known, scores.novel).auc});
  }
  return report;
}

// ---------------------------------------------------------------------------
// File exports.

inline void save_roc_csv(const RocResult& roc, const std::string& path,
                         const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write roc file: " + path);
  if (!header_comment.empty()) out << header_comment;
  out << "fpr,tpr,threshold\n";
  for (const RocPoint& p : roc.curve)
    out << format_double(p.fpr) << ',' << format_double(p.tpr) << ','
        << format_double(p.threshold) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void save_sweep_csv(const SweepReport& report, const std::string& path,
                           const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write sweep file: " + path);
  if (!header_comment.empty()) out << header_comment;
  out << "param_value,auc\n";
  for (const SweepPoint& p : report.points)
    out << format_double(p.value) << ',' << format_double(p.auc) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void save_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace mnd
