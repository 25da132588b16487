#pragma once

// Labeled feature datasets: CSV ingestion, synthetic Gaussian-cluster
// generation, stratified splitting, and per-class prototype computation
// (class means, or k-means centroids when several prototypes per class are
// requested).
//
// Feature CSV format: one sample per line, `label,v1,...,vd`, no header.
// Label 0 is reserved for novel/unlabeled samples; known classes are 1..K.
// Lines starting with `#` and blank lines are skipped. Every feature row is
// L2-normalized on ingestion.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnd/numerics.hpp"
#include "mnd/textio.hpp"

namespace mnd {

struct LabeledDataset {
  Matrix features;          // N x d, rows L2-normalized
  std::vector<int> labels;  // N entries in {0, 1, ..., K}
  int num_known_classes = 0;

  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }

  std::span<const double> row_view(std::size_t i) const {
    return {features.row_ptr(i), features.cols};
  }
  Vec row(std::size_t i) const { return features.row(i); }
};

// Row indices grouped by class label; classes 1..K at index label-1.
struct ClassIndex {
  std::vector<std::vector<std::size_t>> by_class;

  explicit ClassIndex(const LabeledDataset& ds) : by_class(ds.num_known_classes) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      int label = ds.labels[i];
      if (label >= 1) by_class[static_cast<std::size_t>(label) - 1].push_back(i);
    }
  }

  const std::vector<std::size_t>& of(int label) const {
    return by_class[static_cast<std::size_t>(label) - 1];
  }
};

// Requirements on a dataset used for training: known labels only, every class
// with at least `min_per_class` samples.
inline void validate_training_dataset(const LabeledDataset& ds, std::size_t min_per_class = 2) {
  if (ds.size() == 0) throw std::invalid_argument("training dataset is empty");
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == 0)
      throw std::invalid_argument("training dataset contains a label-0 (novel) row at index " +
                                  std::to_string(i));
  ClassIndex index(ds);
  for (int c = 1; c <= ds.num_known_classes; ++c)
    if (index.of(c).size() < min_per_class)
      throw std::invalid_argument("class " + std::to_string(c) + " has " +
                                  std::to_string(index.of(c).size()) + " samples, needs at least " +
                                  std::to_string(min_per_class));
}

inline LabeledDataset load_feature_csv(const std::string& path, int num_known_classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open feature file: " + path);

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;

  auto fail = [&](const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = strip_cr(line);
    if (is_comment_or_blank(text)) continue;

    auto fields = split(text, ',');
    if (fields.size() < 2) fail("row needs a label and at least one feature");
    if (dim == 0) {
      dim = fields.size() - 1;
    } else if (fields.size() - 1 != dim) {
      fail("row has " + std::to_string(fields.size() - 1) + " features, expected " +
           std::to_string(dim));
    }

    long long label = 0;
    if (!parse_int(fields[0], label)) fail("label '" + std::string(fields[0]) + "' is not an integer");
    if (label < 0 || label > num_known_classes)
      fail("label " + std::to_string(label) + " outside 0.." + std::to_string(num_known_classes));

    Vec row(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!parse_double(fields[j + 1], row[j]))
        fail("field '" + std::string(fields[j + 1]) + "' is not a number");
      if (!std::isfinite(row[j])) fail("non-finite feature value");
    }
    double norm = l2_norm(row);
    if (norm <= 0.0) fail("feature row has zero norm");
    for (double& v : row) v /= norm;

    labels.push_back(static_cast<int>(label));
    values.insert(values.end(), row.begin(), row.end());
  }
  if (labels.empty()) throw std::runtime_error(path + ": no data rows");

  LabeledDataset ds;
  ds.features.rows = labels.size();
  ds.features.cols = dim;
  ds.features.values = std::move(values);
  ds.labels = std::move(labels);
  ds.num_known_classes = num_known_classes;
  return ds;
}

inline void save_feature_csv(const LabeledDataset& ds, const std::string& path,
                             const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write feature file: " + path);
  if (!header_comment.empty()) out << header_comment;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    auto row = ds.row_view(i);
    for (double v : row) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct SyntheticConfig {
  int dim = 64;
  int known_classes = 8;
  int novel_classes = 8;
  int samples_per_class = 200;
  double cluster_std = 0.35;
  double center_scale = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (dim < 1 || known_classes < 1 || novel_classes < 1 || samples_per_class < 2)
      throw std::invalid_argument("synthetic config: all counts must be positive "
                                  "(samples_per_class at least 2)");
    if (!(cluster_std > 0.0)) throw std::invalid_argument("synthetic config: cluster_std must be > 0");
    if (!(center_scale > 0.0)) throw std::invalid_argument("synthetic config: center_scale must be > 0");
  }
};

struct SyntheticSplit {
  LabeledDataset train;
  LabeledDataset test_known;
  LabeledDataset test_novel;
};

namespace detail {

inline void append_gaussian_row(LabeledDataset& ds, const Vec& center, double stddev, int label,
                                RngStream& rng) {
  Vec point(center.size());
  for (std::size_t j = 0; j < center.size(); ++j) point[j] = center[j] + rng.normal(0.0, stddev);
  point = l2_normalize(point);
  ds.features.values.insert(ds.features.values.end(), point.begin(), point.end());
  ds.features.rows += 1;
  ds.labels.push_back(label);
}

}  // namespace detail

// Draws K+M cluster centers with components uniform in [-center_scale,
// center_scale], then isotropic Gaussian samples around them. Train and test
// points are separate draws. Known classes are labeled 1..K; novel samples
// are all labeled 0.
inline SyntheticSplit generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  RngStream rng(cfg.seed);

  const int total_classes = cfg.known_classes + cfg.novel_classes;
  std::vector<Vec> centers(static_cast<std::size_t>(total_classes), Vec(cfg.dim));
  for (auto& c : centers)
    for (double& v : c) v = rng.uniform(-cfg.center_scale, cfg.center_scale);

  SyntheticSplit out;
  for (LabeledDataset* ds : {&out.train, &out.test_known, &out.test_novel}) {
    ds->features.cols = static_cast<std::size_t>(cfg.dim);
    ds->num_known_classes = cfg.known_classes;
  }

  for (int c = 0; c < cfg.known_classes; ++c) {
    for (int s = 0; s < cfg.samples_per_class; ++s)
      detail::append_gaussian_row(out.train, centers[c], cfg.cluster_std, c + 1, rng);
    for (int s = 0; s < cfg.samples_per_class; ++s)
      detail::append_gaussian_row(out.test_known, centers[c], cfg.cluster_std, c + 1, rng);
  }
  for (int c = cfg.known_classes; c < total_classes; ++c)
    for (int s = 0; s < cfg.samples_per_class; ++s)
      detail::append_gaussian_row(out.test_novel, centers[c], cfg.cluster_std, 0, rng);

  return out;
}

// Per-class stratified shuffle split. When a class has at least two samples
// both parts keep at least one of them.
inline std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds,
                                                       double holdout_fraction, RngStream& rng) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw std::invalid_argument("split: holdout_fraction must be in (0, 1), got " +
                                std::to_string(holdout_fraction));

  // Group rows by label (including label 0 if present).
  std::vector<int> distinct_labels;
  for (int l : ds.labels)
    if (std::find(distinct_labels.begin(), distinct_labels.end(), l) == distinct_labels.end())
      distinct_labels.push_back(l);
  std::sort(distinct_labels.begin(), distinct_labels.end());

  LabeledDataset main_part, holdout_part;
  for (LabeledDataset* part : {&main_part, &holdout_part}) {
    part->features.cols = ds.features.cols;
    part->num_known_classes = ds.num_known_classes;
  }

  auto append_row = [&](LabeledDataset& part, std::size_t i) {
    auto row = ds.row_view(i);
    part.features.values.insert(part.features.values.end(), row.begin(), row.end());
    part.features.rows += 1;
    part.labels.push_back(ds.labels[i]);
  };

  for (int label : distinct_labels) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == label) idx.push_back(i);

    // Fisher-Yates with the caller's stream.
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.next_below(i));
      std::swap(idx[i - 1], idx[j]);
    }

    std::size_t n = idx.size();
    std::size_t take = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
    if (n >= 2) take = std::clamp<std::size_t>(take, 1, n - 1);
    for (std::size_t i = 0; i < n; ++i) append_row(i < take ? holdout_part : main_part, idx[i]);
  }
  return {std::move(main_part), std::move(holdout_part)};
}

struct PrototypeSet {
  int num_classes = 0;
  int prototypes_per_class = 0;
  std::vector<std::vector<Vec>> per_class;  // index c-1 holds class c's prototypes

  const std::vector<Vec>& of(int label) const {
    return per_class[static_cast<std::size_t>(label) - 1];
  }
  std::size_t dim() const {
    return per_class.empty() || per_class[0].empty() ? 0 : per_class[0][0].size();
  }
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

// Lloyd k-means over `points` (row indices into ds). Seeding: first center
// uniform from rng, the rest by farthest point from the chosen set. Empty
// clusters are repaired by stealing the point farthest from its centroid.
// If objective_trace is non-null it receives the within-cluster sum of
// squared distances after every assignment pass.
inline std::vector<Vec> kmeans(const LabeledDataset& ds, const std::vector<std::size_t>& points,
                               int k, int max_iters, RngStream& rng,
                               std::vector<double>* objective_trace = nullptr) {
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (points.size() < static_cast<std::size_t>(k))
    throw std::invalid_argument("kmeans: fewer points than clusters");

  const std::size_t d = ds.dim();
  std::vector<Vec> centers;
  centers.reserve(static_cast<std::size_t>(k));

  // Seeding.
  std::size_t first = points[rng.next_below(points.size())];
  centers.push_back(ds.row(first));
  std::vector<double> min_d2(points.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < static_cast<std::size_t>(k)) {
    std::size_t best = 0;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double d2 = detail::sq_dist(ds.row_view(points[i]),
                                  std::span<const double>(centers.back()));
      min_d2[i] = std::min(min_d2[i], d2);
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    centers.push_back(ds.row(points[best]));
  }

  std::vector<int> assign(points.size(), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment pass; ties go to the smaller centroid index.
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      int best_c = 0;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double d2 = detail::sq_dist(ds.row_view(points[i]), std::span<const double>(centers[c]));
        if (d2 < best_d2) {
          best_d2 = d2;
          best_c = c;
        }
      }
      if (assign[i] != best_c) changed = true;
      assign[i] = best_c;
      objective += best_d2;
    }
    if (objective_trace) objective_trace->push_back(objective);

    // Empty-cluster repair: give the cluster the point farthest from its
    // current centroid.
    for (int c = 0; c < k; ++c) {
      if (std::find(assign.begin(), assign.end(), c) != assign.end()) continue;
      std::size_t worst = 0;
      double worst_d2 = -1.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        double d2 = detail::sq_dist(ds.row_view(points[i]),
                                    std::span<const double>(centers[assign[i]]));
        if (d2 > worst_d2) {
          worst_d2 = d2;
          worst = i;
        }
      }
      assign[worst] = c;
      changed = true;
    }

    // Update pass.
    std::vector<Vec> sums(static_cast<std::size_t>(k), Vec(d, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto row = ds.row_view(points[i]);
      auto& s = sums[static_cast<std::size_t>(assign[i])];
      for (std::size_t j = 0; j < d; ++j) s[j] += row[j];
      counts[static_cast<std::size_t>(assign[i])] += 1;
    }
    for (int c = 0; c < k; ++c) {
      std::size_t cc = static_cast<std::size_t>(c);
      if (counts[cc] == 0) continue;  // repaired away again; keep the old center
      for (std::size_t j = 0; j < d; ++j) centers[cc][j] = sums[cc][j] / static_cast<double>(counts[cc]);
    }
    if (!changed) break;
  }
  return centers;
}

// P=1: class mean of the (already normalized) feature rows. P>1: per-class
// k-means centroids. Prototypes are not re-normalized.
inline PrototypeSet compute_prototypes(const LabeledDataset& ds, int per_class, int kmeans_iters,
                                       RngStream& rng) {
  if (per_class < 1) throw std::invalid_argument("compute_prototypes: per_class must be >= 1");
  ClassIndex index(ds);

  PrototypeSet protos;
  protos.num_classes = ds.num_known_classes;
  protos.prototypes_per_class = per_class;
  protos.per_class.resize(static_cast<std::size_t>(ds.num_known_classes));

  for (int c = 1; c <= ds.num_known_classes; ++c) {
    const auto& rows = index.of(c);
    if (rows.size() < static_cast<std::size_t>(per_class))
      throw std::invalid_argument("class " + std::to_string(c) + " has " +
                                  std::to_string(rows.size()) + " samples, fewer than " +
                                  std::to_string(per_class) + " prototypes requested");
    if (per_class == 1) {
      Vec mean(ds.dim(), 0.0);
      for (std::size_t i : rows) {
        auto row = ds.row_view(i);
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
      }
      for (double& v : mean) v /= static_cast<double>(rows.size());
      protos.per_class[static_cast<std::size_t>(c) - 1].push_back(std::move(mean));
    } else {
      protos.per_class[static_cast<std::size_t>(c) - 1] =
          kmeans(ds, rows, per_class, kmeans_iters, rng);
    }
  }
  return protos;
}

inline void save_prototypes_csv(const PrototypeSet& protos, const std::string& path,
                                const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write prototype file: " + path);
  if (!header_comment.empty()) out << header_comment;
  for (int c = 1; c <= protos.num_classes; ++c) {
    for (const Vec& p : protos.of(c)) {
      out << c;
      for (double v : p) out << ',' << format_double(v);
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

// Prototype rows are stored as-is (no normalization). Every class 1..K must
// appear with the same number of rows.
inline PrototypeSet load_prototypes_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prototype file: " + path);

  std::vector<std::pair<int, Vec>> rows;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  int max_label = 0;

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = strip_cr(line);
    if (is_comment_or_blank(text)) continue;
    auto fields = split(text, ',');
    auto fail = [&](const std::string& what) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
    };
    if (fields.size() < 2) fail("row needs a label and at least one value");
    if (dim == 0) dim = fields.size() - 1;
    else if (fields.size() - 1 != dim) fail("inconsistent column count");
    long long label = 0;
    if (!parse_int(fields[0], label) || label < 1) fail("prototype label must be a positive integer");
    Vec v(dim);
    for (std::size_t j = 0; j < dim; ++j)
      if (!parse_double(fields[j + 1], v[j])) fail("bad number '" + std::string(fields[j + 1]) + "'");
    max_label = std::max(max_label, static_cast<int>(label));
    rows.emplace_back(static_cast<int>(label), std::move(v));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no prototype rows");

  PrototypeSet protos;
  protos.num_classes = max_label;
  protos.per_class.resize(static_cast<std::size_t>(max_label));
  for (auto& [label, v] : rows)
    protos.per_class[static_cast<std::size_t>(label) - 1].push_back(std::move(v));

  std::size_t per = protos.per_class[0].size();
  for (int c = 1; c <= max_label; ++c)
    if (protos.of(c).size() != per || per == 0)
      throw std::runtime_error(path + ": class " + std::to_string(c) + " has " +
                               std::to_string(protos.of(c).size()) +
                               " prototypes, expected " + std::to_string(per));
  protos.prototypes_per_class = static_cast<int>(per);
  return protos;
}

}  // namespace mnd
