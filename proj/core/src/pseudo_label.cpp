#include "exmap/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "exmap/error.hpp"

namespace exmap::pseudo {
namespace {

void check_aligned(std::size_t maps, std::size_t labels) {
  if (maps != labels) {
    throw Error(ErrorKind::kShape, "pseudo-labels: " + std::to_string(maps) + " heatmaps but " +
                                       std::to_string(labels) + " class labels");
  }
}

std::vector<int> attr_from_assignment(const cluster::ClusterAssignment& a) { return a.labels; }

}  // namespace

std::string_view source_name(Source source) {
  switch (source) {
    case Source::kGExMap: return "gexmap";
    case Source::kLExMap: return "lexmap";
    case Source::kGeorge: return "george";
    case Source::kTrueLabels: return "true-labels";
  }
  return "?";
}

Source parse_source(std::string_view name) {
  for (Source s : {Source::kGExMap, Source::kLExMap, Source::kGeorge, Source::kTrueLabels}) {
    if (name == source_name(s)) return s;
  }
  throw Error(ErrorKind::kInvalidArgument,
              "unknown pseudo-label source '" + std::string(name) + "' (expected gexmap|lexmap|george|true-labels)");
}

std::size_t PseudoGroupLabels::num_nonempty() const {
  return static_cast<std::size_t>(std::count(empty_cells.begin(), empty_cells.end(), false));
}

std::vector<std::vector<std::size_t>> PseudoGroupLabels::members() const {
  std::vector<std::vector<std::size_t>> out(num_groups());
  for (std::size_t i = 0; i < group_ids.size(); ++i) out[static_cast<std::size_t>(group_ids[i])].push_back(i);
  return out;
}

void PseudoGroupLabels::validate() const {
  const std::size_t n = group_ids.size();
  if (attr_labels.size() != n || class_labels.size() != n) {
    throw Error(ErrorKind::kShape, "pseudo-labels: label vectors differ in length");
  }
  if (empty_cells.size() != num_groups()) throw Error(ErrorKind::kShape, "pseudo-labels: empty-cell table size");
  std::vector<bool> seen(num_groups(), false);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = class_labels[i], a = attr_labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes || a < 0 || static_cast<std::size_t>(a) >= attr_range) {
      throw Error(ErrorKind::kShape, "pseudo-labels: sample " + std::to_string(i) + " out of range");
    }
    const int g = c * static_cast<int>(attr_range) + a;
    if (group_ids[i] != g) {
      throw Error(ErrorKind::kShape, "pseudo-labels: sample " + std::to_string(i) + " group id " +
                                         std::to_string(group_ids[i]) + " != " + std::to_string(g));
    }
    seen[static_cast<std::size_t>(g)] = true;
  }
  for (std::size_t g = 0; g < num_groups(); ++g) {
    if (seen[g] == empty_cells[g]) throw Error(ErrorKind::kShape, "pseudo-labels: empty-cell flag mismatch");
  }
}

PseudoGroupLabels cross(std::vector<int> class_labels, std::vector<int> attr_labels, std::size_t num_classes,
                        std::size_t attr_range, Source source) {
  check_aligned(attr_labels.size(), class_labels.size());
  PseudoGroupLabels out;
  out.num_classes = num_classes;
  out.attr_range = attr_range;
  out.source = source;
  out.empty_cells.assign(num_classes * attr_range, true);
  out.group_ids.resize(class_labels.size());
  for (std::size_t i = 0; i < class_labels.size(); ++i) {
    const int c = class_labels[i], a = attr_labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw Error(ErrorKind::kInvalidArgument, "sample " + std::to_string(i) + ": class " + std::to_string(c) +
                                                   " out of range [0," + std::to_string(num_classes) + ")");
    }
    if (a < 0 || static_cast<std::size_t>(a) >= attr_range) {
      throw Error(ErrorKind::kInvalidArgument, "sample " + std::to_string(i) + ": attribute " + std::to_string(a) +
                                                   " out of range [0," + std::to_string(attr_range) + ")");
    }
    const int g = c * static_cast<int>(attr_range) + a;
    out.group_ids[i] = g;
    out.empty_cells[static_cast<std::size_t>(g)] = false;
  }
  out.class_labels = std::move(class_labels);
  out.attr_labels = std::move(attr_labels);
  return out;
}

cluster::ClusterAssignment cluster_vectors(const Matrix& vectors, const ClusterChoice& choice) {
  if (choice.method == cluster::Method::kKMeans) {
    return cluster::kmeans(vectors, choice.kmeans_k, choice.seed).assignment;
  }
  return cluster::spectral_cluster(vectors, choice.spectral).assignment;
}

Matrix heatmap_vectors(const lrp::HeatmapSet& heatmaps) {
  return cluster::l2_normalize_rows(heatmaps.flattened());
}

PseudoGroupLabels gexmap(const lrp::HeatmapSet& heatmaps, std::span<const int> class_labels,
                         std::size_t num_classes, const ClusterChoice& choice) {
  check_aligned(heatmaps.size(), class_labels.size());
  const auto assignment = cluster_vectors(heatmap_vectors(heatmaps), choice);
  return cross({class_labels.begin(), class_labels.end()}, attr_from_assignment(assignment), num_classes,
               assignment.k, Source::kGExMap);
}

PseudoGroupLabels lexmap(const lrp::HeatmapSet& heatmaps, std::span<const int> class_labels,
                         std::size_t num_classes, const ClusterChoice& choice) {
  check_aligned(heatmaps.size(), class_labels.size());
  const Matrix vectors = heatmap_vectors(heatmaps);
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < class_labels.size(); ++i) {
    const int c = class_labels[i];
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw Error(ErrorKind::kInvalidArgument, "sample " + std::to_string(i) + ": class out of range");
    }
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  std::vector<int> attrs(class_labels.size(), 0);
  std::size_t range = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto& idx = by_class[c];
    if (idx.size() < kMinClassSize) {
      throw Error(ErrorKind::kInvalidArgument, "L-ExMap: class " + std::to_string(c) + " has " +
                                                   std::to_string(idx.size()) + " samples, needs at least " +
                                                   std::to_string(kMinClassSize));
    }
    Matrix sub(idx.size(), vectors.cols);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy(vectors.row(idx[r]).begin(), vectors.row(idx[r]).end(), sub.row(r).begin());
    }
    ClusterChoice local = choice;
    if (local.method == cluster::Method::kKMeans) local.kmeans_k = std::min(local.kmeans_k, idx.size());
    const auto a = cluster_vectors(sub, local);
    for (std::size_t r = 0; r < idx.size(); ++r) attrs[idx[r]] = a.labels[r];
    range = std::max(range, a.k);
  }
  return cross({class_labels.begin(), class_labels.end()}, std::move(attrs), num_classes, range, Source::kLExMap);
}

Matrix george_features(const nn::Network& net, const data::GroupedDataset& data) {
  Matrix f = nn::penultimate_features(net, data.images);
  for (std::size_t i = 0; i < f.rows; ++i) {
    auto r = f.row(i);
    double m = 0.0;
    for (double v : r) m = std::max(m, std::abs(v));
    if (m > 0.0) {
      for (double& v : r) v /= m;
    }
  }
  return f;
}

PseudoGroupLabels george(const nn::Network& net, const data::GroupedDataset& data, const ClusterChoice& choice) {
  const auto assignment = cluster_vectors(george_features(net, data), choice);
  return cross(data.class_labels, attr_from_assignment(assignment), data.num_classes, assignment.k, Source::kGeorge);
}

PseudoGroupLabels from_true_groups(const data::GroupedDataset& data) {
  std::vector<int> attrs(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) attrs[i] = data.attr_index(i);
  return cross(data.class_labels, std::move(attrs), data.num_classes, data.attr_cardinality(), Source::kTrueLabels);
}

std::string to_csv(const PseudoGroupLabels& labels) {
  std::ostringstream os;
  os << "sample_index,class,attr,group_id,source\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << i << ',' << labels.class_labels[i] << ',' << labels.attr_labels[i] << ',' << labels.group_ids[i] << ','
       << source_name(labels.source) << '\n';
  }
  return os.str();
}

PseudoGroupLabels parse_csv(std::string_view text, std::size_t num_classes) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "sample_index,class,attr,group_id,source") {
    throw Error(ErrorKind::kFormat, "pseudo-label CSV: missing or unexpected header");
  }
  std::vector<int> classes, attrs, groups;
  std::string source;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> cols;
    while (std::getline(row, field, ',')) cols.push_back(field);
    const auto fail = [&](const std::string& why) {
      return Error(ErrorKind::kFormat, "pseudo-label CSV line " + std::to_string(lineno) + ": " + why);
    };
    if (cols.size() != 5) throw fail("expected 5 columns");
    try {
      if (std::stoul(cols[0]) != classes.size()) throw fail("sample_index out of sequence");
      classes.push_back(std::stoi(cols[1]));
      attrs.push_back(std::stoi(cols[2]));
      groups.push_back(std::stoi(cols[3]));
    } catch (const std::logic_error&) {
      throw fail("non-numeric field");
    }
    if (source.empty()) source = cols[4];
    if (cols[4] != source) throw fail("mixed sources");
  }
  if (classes.empty()) throw Error(ErrorKind::kFormat, "pseudo-label CSV: no rows");
  const int max_attr = *std::max_element(attrs.begin(), attrs.end());
  if (max_attr < 0) throw Error(ErrorKind::kFormat, "pseudo-label CSV: negative attribute");
  PseudoGroupLabels out;
  try {
    out = cross(classes, attrs, num_classes, static_cast<std::size_t>(max_attr) + 1, parse_source(source));
  } catch (const Error& e) {
    throw Error(ErrorKind::kFormat, std::string("pseudo-label CSV: ") + e.what());
  }
  if (out.group_ids != groups) throw Error(ErrorKind::kFormat, "pseudo-label CSV: group_id column inconsistent");
  return out;
}

}  // namespace exmap::pseudo
